#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "caplab/model.hpp"
#include "caplab/objectives.hpp"
#include "caplab/ops.hpp"
#include "caplab/optim.hpp"
#include "caplab/rng.hpp"
#include "gradcheck.hpp"

using namespace caplab;

namespace {

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.enc.dim = 8;
    cfg.enc.stage_blocks = {1, 1, 1, 1, 1, 1};
    cfg.enc.heads = 2;
    cfg.enc.ffn_mult = 2;
    cfg.enc.max_frames = 64;
    cfg.dec.layers = 1;
    cfg.dec.heads = 2;
    cfg.dec.ffn_mult = 2;
    cfg.dec.max_tokens = 32;
    cfg.vocab = 264;
    cfg.proj_dim = 6;
    return cfg;
}

template <typename T>
TensorT<T> random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    auto t = TensorT<T>::zeros({r, c});
    for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = T(rng.normal() * scale);
    return t;
}

template <typename T>
TensorT<T> random_mel(int frames, Rng& rng) {
    return random_mat<T>(frames, 80, rng);
}

}  // namespace

TEST_CASE("two orthonormal pairs at tau=1 give log(1 + 1/e)") {
    auto audio = Tensor::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    auto text = Tensor::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    auto log_tau = Tensor::scalar(0.0f);  // tau = 1
    auto loss = contrastive_loss(audio, text, log_tau);
    CHECK(std::abs(double(loss.item()) - std::log(1.0 + std::exp(-1.0))) < 1e-5);
}

TEST_CASE("identical embeddings give log N, a single pair gives zero") {
    const int n = 4;
    auto audio = Tensor::zeros({n, 3});
    for (int i = 0; i < n; ++i) {
        audio.at(i, 0) = 0.6f;
        audio.at(i, 1) = 0.8f;
        audio.at(i, 2) = 0.0f;
    }
    auto text = audio;
    auto log_tau = Tensor::scalar(0.0f);
    auto loss = contrastive_loss(audio, text, log_tau);
    CHECK(double(loss.item()) == doctest::Approx(std::log(double(n))).epsilon(1e-6));

    Rng rng(2);
    auto a1 = random_mat<float>(1, 5, rng);
    auto t1 = random_mat<float>(1, 5, rng);
    CHECK(contrastive_loss(a1, t1, log_tau).item() == 0.0f);
}

TEST_CASE("swapping the modalities leaves the loss bit-identical") {
    Rng rng(7);
    auto audio = random_mat<float>(5, 8, rng);
    auto text = random_mat<float>(5, 8, rng);
    auto log_tau = Tensor::scalar(std::log(0.07f));
    auto lab = contrastive_loss(audio, text, log_tau);
    auto lba = contrastive_loss(text, audio, log_tau);
    CHECK(lab.item() == lba.item());
}

TEST_CASE("permuting the batch moves the loss by reordering noise only") {
    Rng rng(11);
    auto audio = random_mat<float>(6, 8, rng);
    auto text = random_mat<float>(6, 8, rng);
    auto log_tau = Tensor::scalar(-1.0f);
    auto base = contrastive_loss(audio, text, log_tau);

    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    auto pa = Tensor::zeros({6, 8});
    auto pt = Tensor::zeros({6, 8});
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 8; ++j) {
            pa.at(i, j) = audio.at(perm[size_t(i)], j);
            pt.at(i, j) = text.at(perm[size_t(i)], j);
        }
    auto permuted = contrastive_loss(pa, pt, log_tau);
    CHECK(std::abs(double(permuted.item()) - double(base.item())) <=
          1e-6 * std::max(1.0, std::abs(double(base.item()))));
}

TEST_CASE("temperature clamps at both ends") {
    Rng rng(3);
    auto audio = random_mat<float>(4, 6, rng);
    auto text = random_mat<float>(4, 6, rng);

    auto hot = contrastive_loss(audio, text, Tensor::scalar(std::log(2.0f)));
    auto unit = contrastive_loss(audio, text, Tensor::scalar(0.0f));
    CHECK(hot.item() == unit.item());

    auto frozen = contrastive_loss(audio, text, Tensor::scalar(std::log(0.001f)));
    auto floor = contrastive_loss(audio, text, Tensor::scalar(std::log(0.01f)));
    CHECK(std::abs(double(frozen.item()) - double(floor.item())) < 1e-6);

    CHECK(clamped_tau(std::log(0.07)) == doctest::Approx(0.07));
    CHECK(clamped_tau(5.0) == 1.0);
    CHECK(clamped_tau(-50.0) == 0.01);
}

TEST_CASE("gradient reaches the temperature unless it is clamped") {
    Rng rng(5);
    auto audio = random_mat<float>(4, 6, rng);
    auto text = random_mat<float>(4, 6, rng);
    audio.set_requires_grad(true);
    text.set_requires_grad(true);

    auto log_tau = Tensor::scalar(std::log(0.07f), true);
    auto loss = contrastive_loss(audio, text, log_tau);
    loss.backward();
    REQUIRE(log_tau.has_grad());
    CHECK(std::abs(log_tau.grad_view()[0]) > 0.0f);

    auto clamped = Tensor::scalar(std::log(3.0f), true);
    auto loss2 = contrastive_loss(audio, text, clamped);
    loss2.backward();
    CHECK(clamped.grad_view()[0] == 0.0f);
}

TEST_CASE("contrastive loss survives a finite-difference check") {
    Rng rng(17);
    std::vector<dtensor> params = {random_mat<double>(3, 5, rng), random_mat<double>(3, 5, rng),
                                   dtensor::scalar(std::log(0.3))};
    auto res = gradcheck(params, [](std::vector<dtensor>& p) {
        return contrastive_loss(p[0], p[1], p[2]);
    });
    CHECK(res.max_abs_diff < 1e-4);
}

TEST_CASE("contrastive loss rejects shape mismatches and empty batches") {
    Rng rng(1);
    auto a = random_mat<float>(3, 4, rng);
    auto b = random_mat<float>(3, 5, rng);
    CHECK_THROWS_AS((void)contrastive_loss(a, b, Tensor::scalar(0.0f)), ShapeError);
}

TEST_CASE("in-batch recall@1 counts strict diagonal winners") {
    auto good = Tensor::from({2, 2}, {0.9f, 0.1f, 0.0f, 0.4f});
    CHECK(inbatch_recall_at_1(good) == 1.0);
    auto tie = Tensor::from({2, 2}, {0.5f, 0.5f, 0.5f, 0.5f});
    CHECK(inbatch_recall_at_1(tie) == 0.0);
    auto half = Tensor::from({2, 2}, {0.9f, 0.1f, 0.8f, 0.4f});
    CHECK(inbatch_recall_at_1(half) == 0.5);
}

// ---------------------------------------------------------------------------
// Captioning
// ---------------------------------------------------------------------------

TEST_CASE("appending PAD to a caption target changes nothing, both modes") {
    CaptionModelT<float> m;
    m.init(micro_config(), 42);
    Rng rng(8);
    NoGradGuard ng;
    auto memory = m.audio.encode(random_mel<float>(16, rng));

    std::vector<int> target = {kBosId, 10, 11, 12, kEosId};
    std::vector<int> padded = target;
    padded.insert(padded.end(), {kPadId, kPadId});

    for (bool parallel : {false, true}) {
        auto [s1, c1] = caption_clip_loss(m.decoder, memory, target, parallel);
        auto [s2, c2] = caption_clip_loss(m.decoder, memory, padded, parallel);
        CHECK(c1 == c2);
        CHECK(s1.item() == s2.item());
    }
}

TEST_CASE("parallel-mode logits are blind to the target tokens") {
    CaptionModelT<float> m;
    m.init(micro_config(), 43);
    Rng rng(9);
    NoGradGuard ng;
    auto memory = m.audio.encode(random_mel<float>(16, rng));

    // same length, different tokens: the all-MASK input stream is identical
    std::vector<int> inputs(4, kMaskId);
    auto logits = m.decoder.decode(memory, inputs, false);
    std::vector<int> labels_a = {10, 11, 12, kEosId};
    std::vector<int> labels_b = {200, 30, 44, kEosId};
    int ca = 0, cb = 0;
    auto sa = ops::cross_entropy_sum(logits, labels_a, kPadId, &ca);
    auto sb = ops::cross_entropy_sum(logits, labels_b, kPadId, &cb);
    CHECK(ca == cb);
    CHECK(sa.item() != sb.item());  // labels moved the loss, not the logits

    auto [la, c1] = caption_clip_loss(m.decoder, memory, {kBosId, 10, 11, 12, kEosId}, true);
    auto [lb, c2] = caption_clip_loss(m.decoder, memory, {kBosId, 200, 30, 44, kEosId}, true);
    CHECK(la.item() != lb.item());  // AR mode reacts through the inputs too
}

TEST_CASE("mixing plan honours round(rho * N) and the boundary ratios") {
    Rng rng(21);
    auto p0 = make_plan(0.0, 8, rng);
    CHECK(p0.n_parallel == 0);
    for (bool f : p0.parallel) CHECK_FALSE(f);

    auto p1 = make_plan(1.0, 8, rng);
    CHECK(p1.n_parallel == 8);
    for (bool f : p1.parallel) CHECK(f);

    auto pq = make_plan(0.25, 8, rng);
    CHECK(pq.n_parallel == 2);
    CHECK(int(std::count(pq.parallel.begin(), pq.parallel.end(), true)) == 2);

    auto ph = make_plan(0.5, 3, rng);
    CHECK(ph.n_parallel == 2);  // round(1.5)

    CHECK_THROWS_AS((void)make_plan(-0.1, 4, rng), ValueError);
    CHECK_THROWS_AS((void)make_plan(1.1, 4, rng), ValueError);
}

TEST_CASE("mixed batch loss is the token-weighted combination") {
    CaptionModelT<float> m;
    m.init(micro_config(), 44);
    Rng rng(10);
    NoGradGuard ng;
    std::vector<FrameEmbeddingsT<float>> mems = {m.audio.encode(random_mel<float>(16, rng)),
                                                 m.audio.encode(random_mel<float>(17, rng))};
    std::vector<std::vector<int>> targets = {{kBosId, 5, 6, kEosId},
                                             {kBosId, 7, 8, 9, 10, 11, kEosId}};
    std::vector<bool> flags = {true, false};

    auto batch = caption_batch_loss(m.decoder, mems, targets, flags);

    auto [s0, c0] = caption_clip_loss(m.decoder, mems[0], targets[0], flags[0]);
    auto [s1, c1] = caption_clip_loss(m.decoder, mems[1], targets[1], flags[1]);
    CHECK(c0 == 3);
    CHECK(c1 == 6);
    auto manual = ops::scale(ops::add(s0, s1), 1.0 / double(c0 + c1));
    CHECK(batch.item() == manual.item());

    // rho = 0 / rho = 1 run the exact same code path with uniform flags
    auto pure_ar = caption_batch_loss(m.decoder, mems, targets, {false, false});
    auto manual_ar = ops::scale(
        ops::add(caption_clip_loss(m.decoder, mems[0], targets[0], false).first,
                 caption_clip_loss(m.decoder, mems[1], targets[1], false).first),
        1.0 / 9.0);
    CHECK(pure_ar.item() == manual_ar.item());
}

TEST_CASE("caption gradients agree with finite differences through the decoder") {
    ModelConfig cfg = micro_config();
    CaptionModelT<double> m;
    m.init(cfg, 77);
    Rng rng(12);
    auto mel = random_mel<double>(16, rng);
    std::vector<std::vector<int>> targets = {{kBosId, 20, 21, kEosId}};
    std::vector<bool> flags = {false};

    auto params = m.params();
    for (auto& [n, p] : params) p.zero_grad();
    auto memory = m.audio.encode(mel);
    auto loss = caption_batch_loss(m.decoder, {memory}, targets, flags);
    loss.backward();

    const double eps = 1e-4;
    for (auto& [name, p] : params) {
        if (name != "dec.out.b" && name != "dec.l0.cross.bq") continue;
        auto& g = p.grad_view();
        REQUIRE(!g.empty());
        for (size_t i = 0; i < std::min<size_t>(p.numel(), 16); ++i) {
            NoGradGuard ng;
            double keep = p.data()[i];
            p.data()[i] = keep + eps;
            double lp = caption_batch_loss(m.decoder, {m.audio.encode(mel)}, targets, flags).item();
            p.data()[i] = keep - eps;
            double lm = caption_batch_loss(m.decoder, {m.audio.encode(mel)}, targets, flags).item();
            p.data()[i] = keep;
            double fd = (lp - lm) / (2 * eps);
            INFO(name << "[" << i << "]");
            CHECK(std::abs(fd - g[i]) <= 1e-3 * std::max(1.0, std::abs(g[i])));
        }
    }
}

TEST_CASE("token accuracy scores argmax over non-PAD labels") {
    auto logits = Tensor::from({3, 4}, {0.1f, 0.9f, 0.0f, 0.0f,   // -> 1
                                        0.0f, 0.0f, 2.0f, 0.0f,   // -> 2
                                        5.0f, 0.0f, 0.0f, 0.0f});  // -> 0
    CHECK(token_accuracy(logits, {1, 2, 3}) == doctest::Approx(2.0 / 3.0));
    CHECK(token_accuracy(logits, {1, 2, kPadId}) == doctest::Approx(1.0));
    CHECK(token_accuracy(logits, {kPadId, kPadId, kPadId}) == 0.0);
}

// ---------------------------------------------------------------------------
// Training step plumbing
// ---------------------------------------------------------------------------

TEST_CASE("zero learning rate leaves parameters untouched") {
    Rng rng(30);
    auto audio = random_mat<float>(4, 6, rng);
    auto text = random_mat<float>(4, 6, rng);
    audio.set_requires_grad(true);
    text.set_requires_grad(true);
    auto log_tau = Tensor::scalar(std::log(0.07f), true);
    Params params = {{"a", audio}, {"t", text}, {"tau", log_tau}};

    std::vector<float> before(audio.numel());
    for (size_t i = 0; i < before.size(); ++i) before[i] = audio.data()[i];

    Adam opt;
    auto loss = contrastive_loss(audio, text, log_tau);
    auto st = apply_step(loss, params, opt, {"id0"}, 0.0, 1);
    CHECK(st.lr == 0.0);
    CHECK(opt.step_count() == 1);
    for (size_t i = 0; i < before.size(); ++i) CHECK(audio.data()[i] == before[i]);
}

TEST_CASE("warmup ramps the learning rate linearly") {
    Rng rng(31);
    auto audio = random_mat<float>(3, 4, rng);
    auto text = random_mat<float>(3, 4, rng);
    audio.set_requires_grad(true);
    text.set_requires_grad(true);
    auto log_tau = Tensor::scalar(0.0f, true);
    Params params = {{"a", audio}, {"t", text}, {"tau", log_tau}};
    Adam opt;

    std::vector<double> lrs;
    for (int s = 0; s < 12; ++s) {
        auto loss = contrastive_loss(audio, text, log_tau);
        lrs.push_back(apply_step(loss, params, opt, {}, 1e-3, 10).lr);
    }
    for (int s = 0; s < 10; ++s) CHECK(lrs[size_t(s)] == doctest::Approx(1e-3 * (s + 1) / 10.0));
    CHECK(lrs[10] == doctest::Approx(1e-3));
    CHECK(lrs[11] == doctest::Approx(1e-3));
}

TEST_CASE("a handful of steps drives the contrastive loss down") {
    Rng rng(32);
    auto audio = random_mat<float>(6, 8, rng);
    auto text = random_mat<float>(6, 8, rng);
    audio.set_requires_grad(true);
    text.set_requires_grad(true);
    auto log_tau = Tensor::scalar(std::log(0.07f), true);
    Params params = {{"a", audio}, {"t", text}, {"tau", log_tau}};
    Adam opt;

    double first = 0.0, last = 0.0;
    for (int s = 0; s < 60; ++s) {
        auto loss = contrastive_loss(audio, text, log_tau);
        auto st = apply_step(loss, params, opt, {}, 1e-2, 1);
        if (s == 0) first = st.loss;
        last = st.loss;
    }
    CHECK(last < first);
    CHECK(last < 0.5 * first);
}

TEST_CASE("a non-finite loss aborts with the batch ids attached") {
    auto bad = Tensor::scalar(std::numeric_limits<float>::infinity(), true);
    Params params = {{"x", bad}};
    Adam opt;
    auto loss = ops::scale(bad, 1.0);
    try {
        apply_step(loss, params, opt, {"clip-3", "clip-9"}, 1e-3, 1);
        FAIL("expected TrainAbort");
    } catch (const TrainAbort& e) {
        REQUIRE(e.batch_ids.size() == 2);
        CHECK(e.batch_ids[0] == "clip-3");
        CHECK(e.batch_ids[1] == "clip-9");
        CHECK(opt.step_count() == 0);  // nothing was applied
    }
}

TEST_CASE("gradient accumulation is not equivalent for in-batch negatives") {
    Rng rng(33);
    auto audio = random_mat<float>(4, 6, rng);
    auto text = random_mat<float>(4, 6, rng);
    auto log_tau = Tensor::scalar(0.0f);
    NoGradGuard ng;

    auto full = contrastive_loss(audio, text, log_tau);

    auto a1 = ops::slice_rows(audio, 0, 2), a2 = ops::slice_rows(audio, 2, 2);
    auto t1 = ops::slice_rows(text, 0, 2), t2 = ops::slice_rows(text, 2, 2);
    auto half = 0.5 * (double(contrastive_loss(a1, t1, log_tau).item()) +
                       double(contrastive_loss(a2, t2, log_tau).item()));
    CHECK(std::abs(double(full.item()) - half) > 1e-3);
}

TEST_CASE("micro model overfits one caption quickly") {
    CaptionModelT<float> m;
    m.init(micro_config(), 50);
    Rng rng(34);
    auto mel = random_mel<float>(16, rng);
    std::vector<std::vector<int>> targets = {{kBosId, 30, 31, 32, kEosId}};
    std::vector<bool> flags = {false};

    auto params = m.params();
    Adam opt;
    double first = 0.0, last = 0.0;
    for (int s = 0; s < 150; ++s) {
        auto memory = m.audio.encode(mel);
        auto loss = caption_batch_loss(m.decoder, {memory}, targets, flags);
        auto st = apply_step(loss, params, opt, {"clip"}, 1e-2, 5);
        if (s == 0) first = st.loss;
        last = st.loss;
    }
    CHECK(last < first);
    CHECK(last < 0.5 * first);
}
