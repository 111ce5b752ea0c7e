#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "caplab/bpe.hpp"
#include "caplab/corpus.hpp"
#include "caplab/eval.hpp"
#include "caplab/model.hpp"
#include "caplab/tensor.hpp"

// Experiment orchestration: config (de)serialization + hashing, pretraining
// with resumable checkpoints, evaluation reports, scaling sweeps, and the
// Markdown/SVG report.

namespace caplab {

struct DataConfig {
    std::string manifest;
    int64_t subset = 0;  // 0 = use everything
    uint64_t seed = 0;   // run seed: subsetting, init, batch order
};

struct TrainConfig {
    int steps = 1000;
    double lr = 1e-3;
    int batch = 8;
    double rho = 0.25;  // parallel-decoding share for the captioning objective
    int warmup = 100;
    int ckpt_every = 250;
    int log_every = 1;
};

struct EvalConfig {
    std::vector<std::string> tasks = {"retrieval"};
    int align_steps = 200;
    double align_lr = 1e-2;
};

struct ExperimentConfig {
    std::string objective = "contrastive";  // or "captioning"
    std::string init = "scratch";           // or a checkpoint path
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;

    void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);

// canonical form: sorted-key compact JSON; its FNV-1a hash tags every artifact
std::string canonical_dump(const ExperimentConfig& c);
uint64_t fnv1a64(const std::string& s);
std::string config_hash_hex(const ExperimentConfig& c);

std::string fmt_metric(double v);  // fixed 6-decimal form used everywhere

// Corpus made trainable: log-mels plus tokenized captions per record.
struct LoadedCorpus {
    std::vector<CaptionRecord> records;
    std::vector<Tensor> mels;
    std::vector<std::vector<std::vector<int>>> tokens;  // [record][caption][ids]
    BpeVocab vocab;
};

// ingest -> consolidate -> optional subset -> mels + tokens. bpe_path: load
// the tokenizer from there when the file exists, otherwise train one on the
// captions and (if non-empty) save it there.
LoadedCorpus load_corpus_data(const std::string& manifest, int64_t subset, uint64_t seed,
                              int target_vocab, const std::string& bpe_path);

struct PretrainResult {
    int steps = 0;
    double final_loss = 0.0;
    std::string checkpoint_path;
    std::string log_path;
    std::string config_hash;
};

// Trains per cfg into run_dir (config.json, bpe.vocab, model.ckpt +
// model.ckpt.meta.json, train_log.jsonl). Resumes from the checkpoint when
// one matching the config hash is present; continuation is bit-identical to
// an uninterrupted run.
PretrainResult run_pretrain(const ExperimentConfig& cfg, const std::string& run_dir);

struct EvalEntry {
    std::string checkpoint;
    std::string task;
    std::string pooling;
    std::string metric_name;
    double value = 0.0;
    int n_eval = 0;
    std::string config_hash;
};

// Runs the named tasks against the checkpoint. eval_manifest empty = the
// config's manifest. export_emb non-empty = also dump clip embeddings there.
std::vector<EvalEntry> run_eval_tasks(const ExperimentConfig& cfg, const std::string& run_dir,
                                      const std::string& checkpoint_path,
                                      const std::vector<std::string>& tasks,
                                      const std::string& eval_manifest = "",
                                      const std::string& export_emb = "");

void write_eval_report(const std::string& path, const std::vector<EvalEntry>& entries);
std::vector<EvalEntry> read_eval_report(const std::string& path);

struct SweepOptions {
    std::vector<int64_t> sizes;
    std::vector<uint64_t> seeds;
    int eval_holdout = -1;  // -1 auto; 0 = eval on an overlapping fixed subset
};

struct SweepCell {
    int64_t size = 0;
    uint64_t seed = 0;
    std::vector<EvalEntry> entries;
};

struct SweepResult {
    std::string csv_path;
    std::vector<SweepCell> cells;
};

// Nested subsets (asserted), one pretrain+eval per (size, seed) cell, long
// CSV: size,objective,init,task,metric,value,seed,config_hash.
SweepResult run_scaling_sweep(const ExperimentConfig& cfg, const SweepOptions& opt,
                              const std::string& out_dir);

// report.md (+ scaling.svg when sweep data exists) from artifacts under
// run_dir; missing pieces are listed, never fatal.
void write_report(const std::string& run_dir);

}  // namespace caplab
