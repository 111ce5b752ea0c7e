#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "caplab/error.hpp"
#include "caplab/model.hpp"
#include "caplab/ops.hpp"
#include "caplab/optim.hpp"
#include "caplab/rng.hpp"
#include "caplab/tensor.hpp"

// Training objectives: symmetric InfoNCE over clip embeddings and
// token-weighted captioning loss (autoregressive, parallel, or a mix).

namespace caplab {

constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kMaskId = 3;

// Symmetric InfoNCE. audio/text: [N x d] un-normalized clip embeddings,
// log_tau: scalar learned log-temperature. Rows are normalized, similarities
// scaled by 1/tau with tau = clamp(exp(log_tau), 0.01, 1.0), and both
// softmax directions (audio->text, text->audio) share the cross-modal
// denominator; the two cross-entropies are averaged.
template <typename T>
TensorT<T> contrastive_loss(const TensorT<T>& audio, const TensorT<T>& text,
                            const TensorT<T>& log_tau) {
    if (audio.rank() != 2 || text.rank() != 2 || audio.shape() != text.shape())
        throw ShapeError("contrastive_loss: embedding shapes disagree, " +
                         shape_str(audio.shape()) + " vs " + shape_str(text.shape()));
    const int n = audio.dim(0);
    if (n < 1) throw ValueError("contrastive_loss: empty batch");
    auto a = ops::l2_normalize_rows(audio);
    auto b = ops::l2_normalize_rows(text);
    auto sims = ops::matmul(a, ops::transpose(b));
    auto tau = ops::clamp(ops::exp_t(log_tau), T(0.01), T(1.0));
    auto logits = ops::scale_by(sims, ops::reciprocal(tau));
    std::vector<int> targets(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) targets[size_t(i)] = i;
    auto fwd = ops::cross_entropy(logits, targets);
    auto bwd = ops::cross_entropy(ops::transpose(logits), targets);
    return ops::scale(ops::add(fwd, bwd), 0.5);
}

inline double clamped_tau(double log_tau) {
    double t = std::exp(log_tau);
    return t < 0.01 ? 0.01 : (t > 1.0 ? 1.0 : t);
}

// Fraction of rows whose diagonal entry is the strict row max (ties count
// against). sims: [N x N] raw values.
template <typename T>
double inbatch_recall_at_1(const TensorT<T>& sims) {
    const int n = sims.dim(0);
    if (n == 0) return 0.0;
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        bool best = true;
        for (int j = 0; j < n; ++j)
            if (j != i && !(sims.at(i, j) < sims.at(i, i))) best = false;
        if (best) ++hits;
    }
    return double(hits) / n;
}

// One clip's captioning loss as (token-summed CE, token count). target is the
// full BOS..EOS token sequence. AR mode shifts: inputs drop the last token,
// labels drop BOS, attention is causal. Parallel mode feeds MASK at every
// position and lifts the causal constraint; labels are identical.
template <typename T>
std::pair<TensorT<T>, int> caption_clip_loss(const TextDecoderT<T>& dec,
                                             const FrameEmbeddingsT<T>& memory,
                                             const std::vector<int>& target, bool parallel) {
    if (target.size() < 2)
        throw ValueError("caption_clip_loss: target needs at least BOS and one label token");
    std::vector<int> labels(target.begin() + 1, target.end());
    int n_valid = int(labels.size());
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == kPadId) {
            n_valid = int(i);
            break;
        }
    if (n_valid < 1) throw ValueError("caption_clip_loss: no scoreable tokens");
    std::vector<int> inputs;
    bool causal;
    int valid;
    if (parallel) {
        inputs.assign(labels.size(), kMaskId);
        causal = false;
        valid = n_valid;  // keeps PAD padding out of the bidirectional attention
    } else {
        inputs.assign(target.begin(), target.end() - 1);
        causal = true;
        valid = int(inputs.size());  // causality already walls off the PAD tail
    }
    auto logits = dec.decode(memory, inputs, causal, valid);
    int count = 0;
    auto sum = ops::cross_entropy_sum(logits, labels, kPadId, &count);
    return {sum, count};
}

struct CaptionPlan {
    std::vector<bool> parallel;  // per clip
    int n_parallel = 0;
};

// round(rho * N) clips go parallel; which ones is drawn from rng.
inline CaptionPlan make_plan(double rho, int n, Rng& rng) {
    if (rho < 0.0 || rho > 1.0) throw ValueError("mixing ratio must lie in [0, 1]");
    if (n < 1) throw ValueError("make_plan: empty batch");
    int k = int(std::llround(rho * n));
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
    rng.shuffle(idx);
    CaptionPlan plan;
    plan.parallel.assign(size_t(n), false);
    for (int i = 0; i < k; ++i) plan.parallel[size_t(idx[size_t(i)])] = true;
    plan.n_parallel = k;
    return plan;
}

// Token-weighted mix: sum of per-clip token sums over the total token count.
// Pure AR / pure parallel are this same path with uniform flags.
template <typename T>
TensorT<T> caption_batch_loss(const TextDecoderT<T>& dec,
                              const std::vector<FrameEmbeddingsT<T>>& memories,
                              const std::vector<std::vector<int>>& targets,
                              const std::vector<bool>& parallel) {
    if (memories.empty() || memories.size() != targets.size() ||
        targets.size() != parallel.size())
        throw ValueError("caption_batch_loss: batch arrays disagree");
    std::vector<TensorT<T>> sums;
    int64_t total = 0;
    for (size_t i = 0; i < targets.size(); ++i) {
        auto [s, c] = caption_clip_loss(dec, memories[i], targets[i], parallel[i]);
        sums.push_back(s);
        total += c;
    }
    if (total == 0) throw ValueError("caption_batch_loss: no scoreable tokens");
    auto acc = sums[0];
    for (size_t i = 1; i < sums.size(); ++i) acc = ops::add(acc, sums[i]);
    return ops::scale(acc, 1.0 / double(total));
}

// argmax-vs-label accuracy over non-PAD positions
template <typename T>
double token_accuracy(const TensorT<T>& logits, const std::vector<int>& labels) {
    const int rows = logits.dim(0), cols = logits.dim(1);
    if (int(labels.size()) != rows) throw ShapeError("token_accuracy: label count mismatch");
    int total = 0, hit = 0;
    for (int i = 0; i < rows; ++i) {
        if (labels[size_t(i)] == kPadId) continue;
        int arg = 0;
        for (int j = 1; j < cols; ++j)
            if (logits.at(i, j) > logits.at(i, arg)) arg = j;
        ++total;
        if (arg == labels[size_t(i)]) ++hit;
    }
    return total == 0 ? 0.0 : double(hit) / total;
}

// Greedy AR decode from BOS until EOS (EOS excluded from the result).
template <typename T>
std::vector<int> greedy_decode(const TextDecoderT<T>& dec, const FrameEmbeddingsT<T>& memory,
                               int max_len) {
    NoGradGuard ng;
    std::vector<int> seq = {kBosId};
    std::vector<int> out;
    for (int t = 0; t < max_len; ++t) {
        auto logits = dec.decode(memory, seq, true);
        const int last = logits.dim(0) - 1, vocab = logits.dim(1);
        int arg = 0;
        for (int j = 1; j < vocab; ++j)
            if (logits.at(last, j) > logits.at(last, arg)) arg = j;
        if (arg == kEosId) break;
        out.push_back(arg);
        seq.push_back(arg);
    }
    return out;
}

struct StepStats {
    double loss = 0.0;
    double grad_norm = 0.0;  // pre-clip global norm
    double lr = 0.0;
};

// Shared update path: abort on non-finite loss, backprop, clip at 5.0,
// linear warmup into a constant learning rate, Adam step, clear grads.
template <typename T>
StepStats apply_step(TensorT<T>& loss, ParamsT<T>& params, AdamT<T>& opt,
                     const std::vector<std::string>& batch_ids, double base_lr,
                     int warmup_steps = 100) {
    StepStats st;
    st.loss = double(loss.item());
    if (!std::isfinite(st.loss))
        throw TrainAbort("non-finite loss " + std::to_string(st.loss), batch_ids);
    for (auto& [name, p] : params) p.zero_grad();
    loss.backward();
    std::vector<TensorT<T>> tensors;
    tensors.reserve(params.size());
    for (auto& [name, p] : params) tensors.push_back(p);
    st.grad_norm = clip_grad_norm(tensors, 5.0);
    const int64_t step = opt.step_count() + 1;
    double warm = warmup_steps > 0 ? std::min(1.0, double(step) / warmup_steps) : 1.0;
    st.lr = base_lr * warm;
    opt.set_lr(st.lr);
    opt.step(params);
    return st;
}

}  // namespace caplab
