#include "caplab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "caplab/checkpoint.hpp"
#include "caplab/objectives.hpp"
#include "caplab/ops.hpp"
#include "caplab/optim.hpp"
#include "caplab/rng.hpp"

namespace caplab {

Tensor pool_mean(const FrameEmbeddings& f) { return ops::masked_mean_rows(f.frames, f.valid); }

void MhapParams::init(int dim, int n_heads, uint64_t seed) {
    if (n_heads < 1 || dim % n_heads != 0)
        throw ConfigError("mhap: dim must be a positive multiple of heads");
    heads = n_heads;
    const int dh = dim / n_heads;
    queries = Tensor::zeros({n_heads, dh}, true);
    key_w = Tensor::zeros({dim, dim}, true);
    out_w = model_detail::init_tensor<float>({dim, dim}, seed, "mhap.out_w", 0.02);
    out_b = Tensor::zeros({dim}, true);
}

Params MhapParams::params(const std::string& prefix) const {
    return {{prefix + ".queries", queries},
            {prefix + ".key_w", key_w},
            {prefix + ".out_w", out_w},
            {prefix + ".out_b", out_b}};
}

Tensor pool_mhap(const FrameEmbeddings& f, const MhapParams& p) {
    if (f.valid < 1) throw ValueError("pool_mhap: zero valid frames");
    const int dim = f.frames.dim(1);
    const int dh = dim / p.heads;

    auto keys = ops::matmul(f.frames, p.key_w);
    // column mask: -1e30 on rows past the valid prefix
    auto mask = Tensor::zeros({f.frames.dim(0), 1});
    for (int t = f.valid; t < f.frames.dim(0); ++t) mask.at(t, 0) = -1e30f;

    std::vector<Tensor> pooled;
    pooled.reserve(size_t(p.heads));
    for (int h = 0; h < p.heads; ++h) {
        auto kh = ops::slice_cols(keys, h * dh, dh);
        auto qh = ops::slice_rows(p.queries, h, 1);
        auto scores = ops::scale(ops::matmul(kh, ops::transpose(qh)), 1.0 / std::sqrt(double(dh)));
        auto weights = ops::softmax(ops::add(scores, mask), 0);  // [T x 1]
        auto vh = ops::slice_cols(f.frames, h * dh, dh);
        pooled.push_back(ops::matmul(ops::transpose(weights), vh));  // [1 x d_h]
    }
    return ops::add_rowvec(ops::matmul(ops::concat_cols(pooled), p.out_w), p.out_b);
}

void ProbeTask::validate() const {
    if (n_classes < 2) throw ConfigError("probe: need at least 2 classes");
    if (kind == Kind::single_label && metric != Metric::accuracy)
        throw ConfigError("probe: single_label pairs with accuracy");
    if (kind == Kind::multi_label && metric != Metric::mean_ap)
        throw ConfigError("probe: multi_label pairs with mAP");
}

namespace {

Tensor multihot_tensor(const std::vector<std::vector<int>>& rows, const std::vector<size_t>& idx,
                       int n_classes) {
    auto t = Tensor::zeros({int(idx.size()), n_classes});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (int(rows[idx[i]].size()) != n_classes)
            throw ShapeError("probe: multi-hot row width disagrees with n_classes");
        for (int c = 0; c < n_classes; ++c) t.at(int(i), c) = float(rows[idx[i]][size_t(c)]);
    }
    return t;
}

}  // namespace

ProbeResult train_probe(const ProbeData& train, const ProbeData& eval_set, const ProbeTask& task,
                        int epochs, double lr, int batch, uint64_t seed) {
    task.validate();
    const size_t n = train.x.size();
    if (n == 0) throw ValueError("probe: empty training set");
    const bool single = task.kind == ProbeTask::Kind::single_label;
    if (single) {
        if (train.y_single.size() != n) throw ShapeError("probe: label count mismatch");
        std::set<int> distinct(train.y_single.begin(), train.y_single.end());
        if (distinct.size() < 2)
            throw ValueError("probe: degenerate training set with a single class");
        for (int y : train.y_single)
            if (y < 0 || y >= task.n_classes) throw IndexError("probe: label out of range");
    } else {
        if (train.y_multi.size() != n) throw ShapeError("probe: label count mismatch");
    }

    const int dim = train.x[0].frames.dim(1);
    MhapParams mhap;
    const bool use_mhap = task.pooling == ProbeTask::Pooling::mhap;
    if (use_mhap) mhap.init(dim, 4, Rng::derive(seed, "probe-mhap"));

    auto w = model_detail::init_tensor<float>({dim, task.n_classes},
                                              Rng::derive(seed, "probe-head"), "w", 0.02);
    auto b = Tensor::zeros({task.n_classes}, true);
    Params params = {{"probe.w", w}, {"probe.b", b}};
    if (use_mhap)
        for (auto& kv : mhap.params("probe.pool")) params.push_back(kv);

    // mean pooling does not train, so pool once up front
    std::vector<Tensor> fixed_pool;
    if (!use_mhap) {
        NoGradGuard ng;
        for (const auto& f : train.x) fixed_pool.push_back(pool_mean(f));
    }

    auto pooled_rows = [&](const std::vector<size_t>& idx) {
        std::vector<Tensor> rows;
        rows.reserve(idx.size());
        for (size_t i : idx)
            rows.push_back(use_mhap ? pool_mhap(train.x[i], mhap) : fixed_pool[i]);
        return ops::concat_rows(rows);
    };

    Rng rng(Rng::derive(seed, "probe-batches"));
    AdamT<float> opt(lr);
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t start = 0; start < n; start += size_t(batch)) {
            std::vector<size_t> idx(order.begin() + long(start),
                                    order.begin() + long(std::min(n, start + size_t(batch))));
            auto x = pooled_rows(idx);
            auto logits = ops::add_rowvec(ops::matmul(x, w), b);
            Tensor loss;
            if (single) {
                std::vector<int> ys;
                for (size_t i : idx) ys.push_back(train.y_single[i]);
                loss = ops::cross_entropy(logits, ys);
            } else {
                loss = ops::bce_with_logits(logits, multihot_tensor(train.y_multi, idx,
                                                                    task.n_classes));
            }
            for (auto& [name, p] : params) p.zero_grad();
            loss.backward();
            opt.step(params);
        }
    }

    // held-out metric
    NoGradGuard ng;
    const size_t m = eval_set.x.size();
    if (m == 0) throw ValueError("probe: empty eval set");
    std::vector<std::vector<double>> scores;
    for (size_t i = 0; i < m; ++i) {
        auto pooled = use_mhap ? pool_mhap(eval_set.x[i], mhap) : pool_mean(eval_set.x[i]);
        auto logits = ops::add_rowvec(ops::matmul(pooled, w), b);
        std::vector<double> row(size_t(task.n_classes));
        for (int c = 0; c < task.n_classes; ++c) row[size_t(c)] = double(logits.at(0, c));
        scores.push_back(std::move(row));
    }

    ProbeResult res;
    res.n_eval = int(m);
    if (single) {
        if (eval_set.y_single.size() != m) throw ShapeError("probe: eval label count mismatch");
        int hits = 0;
        for (size_t i = 0; i < m; ++i) {
            int arg = 0;
            for (int c = 1; c < task.n_classes; ++c)
                if (scores[i][size_t(c)] > scores[i][size_t(arg)]) arg = c;
            hits += (arg == eval_set.y_single[i]);
        }
        res.value = double(hits) / double(m);
        res.metric_name = "accuracy";
    } else {
        if (eval_set.y_multi.size() != m) throw ShapeError("probe: eval label count mismatch");
        res.value = compute_map(scores, eval_set.y_multi).value;
        res.metric_name = "mAP";
    }
    return res;
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<float>> snapshot_audio(const Params& params) {
    std::vector<std::vector<float>> snap;
    for (const auto& [name, p] : params)
        if (name.rfind("audio.", 0) == 0)
            snap.emplace_back(p.data(), p.data() + p.numel());
    return snap;
}

void verify_audio_frozen(const Params& params, const std::vector<std::vector<float>>& snap) {
    size_t k = 0;
    for (const auto& [name, p] : params) {
        if (name.rfind("audio.", 0) != 0) continue;
        const auto& before = snap.at(k++);
        if (before.size() != p.numel() ||
            std::memcmp(before.data(), p.data(), sizeof(float) * p.numel()) != 0)
            throw ValueError("frozen audio encoder was modified: " + name);
    }
}

}  // namespace

std::vector<std::vector<double>> audio_clip_embeddings(const CaptionModel& model,
                                                       const std::vector<AlignPair>& pairs) {
    NoGradGuard ng;
    std::vector<std::vector<double>> rows;
    for (const auto& pr : pairs) {
        auto emb = model.head.project_audio(model.audio.encode(pr.mel));
        std::vector<double> row(emb.numel());
        for (size_t i = 0; i < row.size(); ++i) row[i] = double(emb.data()[i]);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::vector<double>> text_clip_embeddings(const CaptionModel& model,
                                                      const std::vector<AlignPair>& pairs) {
    NoGradGuard ng;
    std::vector<std::vector<double>> rows;
    for (const auto& pr : pairs) {
        auto emb = model.head.project_text(model.text.encode(pr.tokens));
        std::vector<double> row(emb.numel());
        for (size_t i = 0; i < row.size(); ++i) row[i] = double(emb.data()[i]);
        rows.push_back(std::move(row));
    }
    return rows;
}

AlignResult run_alignment(CaptionModel& model, const std::vector<AlignPair>& pairs,
                          const std::string& mode, int steps, double lr, uint64_t seed) {
    if (pairs.empty()) throw ValueError("run_alignment: no pairs");
    const bool retrieval = mode == "retrieval";
    if (!retrieval && mode != "captioning")
        throw ValueError("run_alignment: unknown mode \"" + mode + "\"");

    auto all = model.params();
    auto snap = snapshot_audio(all);

    Params trainable;
    for (auto& [name, p] : all) {
        bool pick = retrieval ? (name.rfind("text.", 0) == 0 || name.rfind("contrast.", 0) == 0)
                              : name.find(".cross.") != std::string::npos;
        if (pick) trainable.emplace_back(name, p);
    }

    // the audio tower is frozen, so its forward runs once, untracked
    std::vector<FrameEmbeddings> memories;
    std::vector<Tensor> pooled;
    {
        NoGradGuard ng;
        for (const auto& pr : pairs) {
            auto enc = model.audio.encode(pr.mel);
            memories.push_back(enc);
            pooled.push_back(pool_mean(enc));
        }
    }

    Rng rng(Rng::derive(seed, "alignment"));
    AdamT<float> opt(lr);
    std::vector<std::string> ids;
    for (const auto& pr : pairs) ids.push_back(pr.id);

    std::vector<std::vector<int>> targets;
    std::vector<bool> flags(pairs.size(), false);
    for (const auto& pr : pairs) targets.push_back(pr.tokens);

    for (int s = 0; s < steps; ++s) {
        Tensor loss;
        if (retrieval) {
            std::vector<Tensor> arows, trows;
            for (size_t i = 0; i < pairs.size(); ++i) {
                arows.push_back(model.head.project_pooled(pooled[i]));
                trows.push_back(model.head.project_text(model.text.encode(pairs[i].tokens)));
            }
            loss = contrastive_loss(ops::concat_rows(arows), ops::concat_rows(trows),
                                    model.head.log_tau());
        } else {
            loss = caption_batch_loss(model.decoder, memories, targets, flags);
        }
        apply_step(loss, trainable, opt, ids, lr, /*warmup*/ 1);
    }

    verify_audio_frozen(model.params(), snap);

    AlignResult res;
    res.steps = steps;
    if (retrieval) {
        auto r = retrieval_eval(audio_clip_embeddings(model, pairs),
                                text_clip_embeddings(model, pairs), {1});
        res.value = r.text_to_audio[1];
        res.metric_name = "t2a_recall@1";
    } else {
        NoGradGuard ng;
        double acc = 0.0;
        for (size_t i = 0; i < pairs.size(); ++i) {
            std::vector<int> inputs(pairs[i].tokens.begin(), pairs[i].tokens.end() - 1);
            std::vector<int> labels(pairs[i].tokens.begin() + 1, pairs[i].tokens.end());
            auto logits = model.decoder.decode(memories[i], inputs, true);
            acc += token_accuracy(logits, labels);
        }
        res.value = acc / double(pairs.size());
        res.metric_name = "token_acc";
    }
    return res;
}

void export_embeddings(const CaptionModel& model, const std::vector<AlignPair>& pairs,
                       const std::string& path) {
    NoGradGuard ng;
    Params out;
    for (const auto& pr : pairs) {
        auto emb = model.head.project_audio(model.audio.encode(pr.mel));
        out.emplace_back("emb/" + pr.id, emb);
    }
    save_checkpoint(path, out);
}

}  // namespace caplab
