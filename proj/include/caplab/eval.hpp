#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caplab/metrics.hpp"
#include "caplab/model.hpp"
#include "caplab/tensor.hpp"

// Frozen-representation evaluation: pooling, linear probes, LiT-style
// alignment, and embedding export.

namespace caplab {

// mean over the valid frames only
Tensor pool_mean(const FrameEmbeddings& f);

// Multi-head attention pooling: H learned queries against a shared key
// projection; per-head weights softmax(q . k / sqrt(d_h)) over valid frames;
// concat of per-head weighted sums, then a linear map.
struct MhapParams {
    Tensor queries;  // [H x d_h]
    Tensor key_w;    // [D x D]
    Tensor out_w;    // [D x D]
    Tensor out_b;    // [D]
    int heads = 4;

    // queries and key projection start at zero (uniform attention); the
    // output map starts random
    void init(int dim, int n_heads, uint64_t seed);
    Params params(const std::string& prefix) const;
};

Tensor pool_mhap(const FrameEmbeddings& f, const MhapParams& p);

struct ProbeTask {
    enum class Kind { single_label, multi_label };
    enum class Metric { accuracy, mean_ap };
    enum class Pooling { mean, mhap };

    Kind kind = Kind::single_label;
    int n_classes = 2;
    Metric metric = Metric::accuracy;
    Pooling pooling = Pooling::mean;

    void validate() const;  // accuracy <-> single_label, mAP <-> multi_label
};

struct ProbeData {
    std::vector<FrameEmbeddings> x;
    std::vector<int> y_single;              // single_label targets
    std::vector<std::vector<int>> y_multi;  // multi-hot rows, [n][n_classes]
};

struct ProbeResult {
    double value = 0.0;
    std::string metric_name;
    int n_eval = 0;
};

// Linear probe on frozen frame embeddings. Adam, no weight decay; mhap
// pooling parameters train jointly with the head.
ProbeResult train_probe(const ProbeData& train, const ProbeData& eval_set, const ProbeTask& task,
                        int epochs = 30, double lr = 1e-3, int batch = 256, uint64_t seed = 0);

struct AlignPair {
    Tensor mel;
    std::vector<int> tokens;  // BOS..EOS
    std::string id;
};

struct AlignResult {
    double value = 0.0;
    std::string metric_name;
    int steps = 0;
};

// LiT-style alignment against a frozen audio encoder. mode "retrieval" trains
// the text encoder, both projections, and the temperature with the
// contrastive loss; mode "captioning" trains only decoder cross-attention
// with the AR loss. Audio weights are snapshotted and verified bit-identical.
AlignResult run_alignment(CaptionModel& model, const std::vector<AlignPair>& pairs,
                          const std::string& mode, int steps, double lr, uint64_t seed);

// clip embeddings through the audio tower + projection, one row per pair
std::vector<std::vector<double>> audio_clip_embeddings(const CaptionModel& model,
                                                       const std::vector<AlignPair>& pairs);
std::vector<std::vector<double>> text_clip_embeddings(const CaptionModel& model,
                                                      const std::vector<AlignPair>& pairs);

// checkpoint-format export under names "emb/<id>"
void export_embeddings(const CaptionModel& model, const std::vector<AlignPair>& pairs,
                       const std::string& path);

}  // namespace caplab
