#include "caplab/experiment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "caplab/audio.hpp"
#include "caplab/checkpoint.hpp"
#include "caplab/error.hpp"
#include "caplab/metrics.hpp"
#include "caplab/objectives.hpp"
#include "caplab/optim.hpp"
#include "caplab/rng.hpp"
#include "caplab/synth.hpp"

namespace caplab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (objective != "contrastive" && objective != "captioning")
        throw ConfigError("objective must be contrastive or captioning, got \"" + objective +
                          "\"");
    if (init.empty()) throw ConfigError("init must be scratch or a checkpoint path");
    if (data.manifest.empty()) throw ConfigError("data.manifest is required");
    model.validate();
    if (train.steps < 0) throw ConfigError("train.steps must be non-negative");
    if (train.batch < 1) throw ConfigError("train.batch must be positive");
    if (train.lr < 0.0) throw ConfigError("train.lr must be non-negative");
    if (train.rho < 0.0 || train.rho > 1.0) throw ConfigError("train.rho must lie in [0, 1]");
    if (train.warmup < 0) throw ConfigError("train.warmup must be non-negative");
    if (train.ckpt_every < 1) throw ConfigError("train.ckpt_every must be positive");
    if (train.log_every < 1) throw ConfigError("train.log_every must be positive");
    static const std::set<std::string> known = {
        "retrieval",   "caption",        "probe_kind",      "probe_kind_mhap",
        "probe_attr",  "probe_attr_mhap", "align_retrieval", "align_caption"};
    for (const auto& t : eval.tasks)
        if (!known.count(t)) throw ConfigError("unknown eval task \"" + t + "\"");
    if (eval.align_steps < 0) throw ConfigError("eval.align_steps must be non-negative");
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    c.objective = j.value("objective", c.objective);
    c.init = j.value("init", c.init);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        c.data.manifest = d.value("manifest", c.data.manifest);
        c.data.subset = d.value("subset", c.data.subset);
        c.data.seed = d.value("seed", c.data.seed);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        c.model.enc.dim = m.value("dim", c.model.enc.dim);
        if (m.contains("stage_blocks"))
            c.model.enc.stage_blocks = m.at("stage_blocks").get<std::vector<int>>();
        c.model.enc.heads = m.value("heads", c.model.enc.heads);
        c.model.enc.ffn_mult = m.value("ffn_mult", c.model.enc.ffn_mult);
        c.model.enc.max_frames = m.value("max_frames", c.model.enc.max_frames);
        c.model.dec.layers = m.value("dec_layers", c.model.dec.layers);
        c.model.dec.heads = m.value("dec_heads", c.model.dec.heads);
        c.model.dec.ffn_mult = m.value("dec_ffn_mult", c.model.dec.ffn_mult);
        c.model.dec.max_tokens = m.value("max_tokens", c.model.dec.max_tokens);
        c.model.vocab = m.value("vocab", c.model.vocab);
        c.model.proj_dim = m.value("proj_dim", c.model.proj_dim);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.steps = t.value("steps", c.train.steps);
        c.train.lr = t.value("lr", c.train.lr);
        c.train.batch = t.value("batch", c.train.batch);
        c.train.rho = t.value("rho", c.train.rho);
        c.train.warmup = t.value("warmup", c.train.warmup);
        c.train.ckpt_every = t.value("ckpt_every", c.train.ckpt_every);
        c.train.log_every = t.value("log_every", c.train.log_every);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        if (e.contains("tasks")) c.eval.tasks = e.at("tasks").get<std::vector<std::string>>();
        c.eval.align_steps = e.value("align_steps", c.eval.align_steps);
        c.eval.align_lr = e.value("align_lr", c.eval.align_lr);
    }
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    return json{
        {"objective", c.objective},
        {"init", c.init},
        {"data", {{"manifest", c.data.manifest}, {"subset", c.data.subset},
                  {"seed", c.data.seed}}},
        {"model",
         {{"dim", c.model.enc.dim},
          {"stage_blocks", c.model.enc.stage_blocks},
          {"heads", c.model.enc.heads},
          {"ffn_mult", c.model.enc.ffn_mult},
          {"max_frames", c.model.enc.max_frames},
          {"dec_layers", c.model.dec.layers},
          {"dec_heads", c.model.dec.heads},
          {"dec_ffn_mult", c.model.dec.ffn_mult},
          {"max_tokens", c.model.dec.max_tokens},
          {"vocab", c.model.vocab},
          {"proj_dim", c.model.proj_dim}}},
        {"train",
         {{"steps", c.train.steps},
          {"lr", c.train.lr},
          {"batch", c.train.batch},
          {"rho", c.train.rho},
          {"warmup", c.train.warmup},
          {"ckpt_every", c.train.ckpt_every},
          {"log_every", c.train.log_every}}},
        {"eval", {{"tasks", c.eval.tasks}, {"align_steps", c.eval.align_steps},
                  {"align_lr", c.eval.align_lr}}}};
}

std::string canonical_dump(const ExperimentConfig& c) {
    // nlohmann objects keep keys sorted, so a compact dump is canonical
    return config_to_json(c).dump();
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

std::string config_hash_hex(const ExperimentConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  (unsigned long long)fnv1a64(canonical_dump(c)));
    return buf;
}

namespace {

// resuming with a longer step budget is the normal interrupted-run flow, so
// the checkpoint-identity hash ignores train.steps; everything else must match
std::string resume_identity(const ExperimentConfig& c) {
    auto norm = c;
    norm.train.steps = 0;
    return config_hash_hex(norm);
}

}  // namespace

std::string fmt_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

LoadedCorpus load_corpus_data(const std::string& manifest, int64_t subset, uint64_t seed,
                              int target_vocab, const std::string& bpe_path) {
    LoadedCorpus out;
    auto rep = ingest(manifest);
    out.records = consolidate(rep.records);
    if (out.records.empty()) throw ValueError("corpus is empty after consolidation");
    if (subset > 0) out.records = sample_subsets(out.records, {subset}, seed)[0];

    if (!bpe_path.empty() && fs::exists(bpe_path)) {
        out.vocab = BpeVocab::load(bpe_path);
    } else {
        std::vector<std::string> texts;
        for (const auto& r : out.records)
            for (const auto& c : r.captions) texts.push_back(c);
        out.vocab = BpeVocab::train(texts, target_vocab);
        if (!bpe_path.empty()) out.vocab.save(bpe_path);
    }

    for (const auto& r : out.records) {
        Waveform w = read_wav(r.audio_path);
        if (w.sample_rate != kMelRate) w = resample(w, kMelRate);
        out.mels.push_back(log_mel(w));
        std::vector<std::vector<int>> per_caption;
        for (const auto& c : r.captions) per_caption.push_back(out.vocab.encode(c));
        out.tokens.push_back(std::move(per_caption));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

namespace {

double contrastive_r1_from_values(const Tensor& a, const Tensor& b) {
    const int n = a.dim(0), d = a.dim(1);
    std::vector<std::vector<double>> an(static_cast<size_t>(n),
                                        std::vector<double>(static_cast<size_t>(d)));
    std::vector<std::vector<double>> bn = an;
    for (int i = 0; i < n; ++i) {
        double na = 0, nb = 0;
        for (int j = 0; j < d; ++j) {
            na += double(a.at(i, j)) * a.at(i, j);
            nb += double(b.at(i, j)) * b.at(i, j);
        }
        na = std::sqrt(na) > 0 ? std::sqrt(na) : 1.0;
        nb = std::sqrt(nb) > 0 ? std::sqrt(nb) : 1.0;
        for (int j = 0; j < d; ++j) {
            an[size_t(i)][size_t(j)] = a.at(i, j) / na;
            bn[size_t(i)][size_t(j)] = b.at(i, j) / nb;
        }
    }
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        double diag = 0;
        for (int j = 0; j < d; ++j) diag += an[size_t(i)][size_t(j)] * bn[size_t(i)][size_t(j)];
        bool best = true;
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            double s = 0;
            for (int j = 0; j < d; ++j) s += an[size_t(i)][size_t(j)] * bn[size_t(k)][size_t(j)];
            if (!(s < diag)) best = false;
        }
        hits += best;
    }
    return double(hits) / std::max(1, n);
}

// pooled teacher-forced accuracy across a batch (AR inputs)
double batch_token_accuracy(const CaptionModel& model,
                            const std::vector<FrameEmbeddings>& memories,
                            const std::vector<const std::vector<int>*>& targets) {
    NoGradGuard ng;
    int64_t hits = 0, total = 0;
    for (size_t i = 0; i < targets.size(); ++i) {
        const auto& t = *targets[i];
        std::vector<int> inputs(t.begin(), t.end() - 1);
        std::vector<int> labels(t.begin() + 1, t.end());
        auto logits = model.decoder.decode(memories[i], inputs, true);
        for (size_t r = 0; r < labels.size(); ++r) {
            if (labels[r] == kPadId) continue;
            int arg = 0;
            for (int j = 1; j < logits.dim(1); ++j)
                if (logits.at(int(r), j) > logits.at(int(r), arg)) arg = j;
            ++total;
            hits += (arg == labels[r]);
        }
    }
    return total == 0 ? 0.0 : double(hits) / double(total);
}

std::array<uint64_t, 4> rng_state_from_meta(const json& meta) {
    std::array<uint64_t, 4> st{};
    const auto& arr = meta.at("rng");
    if (!arr.is_array() || arr.size() != 4) throw IoError("checkpoint meta: bad rng state");
    for (size_t i = 0; i < 4; ++i) st[i] = std::stoull(arr[i].get<std::string>());
    return st;
}

json rng_state_to_meta(const std::array<uint64_t, 4>& st) {
    json arr = json::array();
    for (uint64_t v : st) arr.push_back(std::to_string(v));
    return arr;
}

}  // namespace

PretrainResult run_pretrain(const ExperimentConfig& cfg, const std::string& run_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create " + run_dir + ": " + ec.message());

    const std::string hash = config_hash_hex(cfg);
    {
        std::ofstream f(fs::path(run_dir) / "config.json", std::ios::binary);
        if (!f) throw IoError("cannot write config.json in " + run_dir);
        f << config_to_json(cfg).dump(2) << "\n";
    }

    const std::string bpe_path = (fs::path(run_dir) / "bpe.vocab").string();
    auto data = load_corpus_data(cfg.data.manifest, cfg.data.subset, cfg.data.seed,
                                 cfg.model.vocab, bpe_path);

    CaptionModel model;
    model.init(cfg.model, Rng::derive(cfg.data.seed, "model-init"));
    auto params = model.params();
    if (cfg.init != "scratch") load_into(cfg.init, params, "audio.");

    Adam opt(cfg.train.lr);
    Rng rng(Rng::derive(cfg.data.seed, "train-loop"));

    const std::string ckpt_path = (fs::path(run_dir) / "model.ckpt").string();
    const std::string meta_path = ckpt_path + ".meta.json";
    const std::string log_path = (fs::path(run_dir) / "train_log.jsonl").string();

    int start = 0;
    if (fs::exists(ckpt_path) && fs::exists(meta_path)) {
        std::ifstream mf(meta_path);
        json meta = json::parse(mf, nullptr, true);
        if (meta.value("resume_id", "") != resume_identity(cfg))
            throw ConfigError("checkpoint in " + run_dir + " belongs to a different config");
        start = meta.at("step").get<int>();
        load_into(ckpt_path, params);
        auto stored = load_checkpoint(ckpt_path);
        std::map<std::string, const Tensor*> by_name;
        for (const auto& [name, t] : stored) by_name[name] = &t;
        for (const auto& [name, p] : params) {
            auto mit = by_name.find("opt/" + name + ".m");
            auto vit = by_name.find("opt/" + name + ".v");
            if (mit == by_name.end() || vit == by_name.end()) continue;
            std::vector<float> m(mit->second->data(), mit->second->data() + mit->second->numel());
            std::vector<float> v(vit->second->data(), vit->second->data() + vit->second->numel());
            opt.set_slot(name, std::move(m), std::move(v));
        }
        opt.set_step_count(start);
        rng.set_state(rng_state_from_meta(meta));
    }

    std::ofstream log(log_path, start > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write " + log_path);

    auto save_ck = [&](int step) {
        Params out = params;
        for (const auto& [name, p] : params) {
            if (!opt.has_slot(name)) continue;
            auto slot = opt.slot(name);
            out.emplace_back("opt/" + name + ".m", Tensor::from(p.shape(), slot.m));
            out.emplace_back("opt/" + name + ".v", Tensor::from(p.shape(), slot.v));
        }
        save_checkpoint(ckpt_path, out);
        json meta = {{"step", step},
                     {"config_hash", hash},
                     {"resume_id", resume_identity(cfg)},
                     {"rng", rng_state_to_meta(rng.state())}};
        std::ofstream mf(meta_path, std::ios::binary);
        mf << meta.dump(2) << "\n";
    };

    PretrainResult res;
    res.checkpoint_path = ckpt_path;
    res.log_path = log_path;
    res.config_hash = hash;
    res.steps = std::max(start, cfg.train.steps);

    const size_t n = data.records.size();
    const bool contrastive = cfg.objective == "contrastive";

    for (int step = start + 1; step <= cfg.train.steps; ++step) {
        std::vector<size_t> idx;
        std::vector<std::string> ids;
        for (int b = 0; b < cfg.train.batch; ++b) {
            size_t i = size_t(rng.next_below(n));
            idx.push_back(i);
            ids.push_back(data.records[i].audio_id);
        }
        std::vector<const std::vector<int>*> caps;
        for (size_t i : idx) {
            const auto& tk = data.tokens[i];
            size_t pick = tk.size() == 1 ? 0 : size_t(rng.next_below(tk.size()));
            caps.push_back(&tk[pick]);
        }

        Tensor loss;
        json extra;
        if (contrastive) {
            std::vector<Tensor> arows, trows;
            for (size_t b = 0; b < idx.size(); ++b) {
                auto enc = model.audio.encode(data.mels[idx[b]]);
                arows.push_back(model.head.project_audio(enc));
                trows.push_back(model.head.project_text(model.text.encode(*caps[b])));
            }
            auto a = ops::concat_rows(arows);
            auto t = ops::concat_rows(trows);
            loss = contrastive_loss(a, t, model.head.log_tau());
            extra["tau"] = clamped_tau(double(model.head.log_tau().at(0)));
            extra["tokens_or_pairs"] = int(idx.size());
            extra["inbatch_r1"] = contrastive_r1_from_values(a, t);
        } else {
            auto plan = make_plan(cfg.train.rho, int(idx.size()), rng);
            std::vector<FrameEmbeddings> memories;
            std::vector<std::vector<int>> targets;
            for (size_t b = 0; b < idx.size(); ++b) {
                memories.push_back(model.audio.encode(data.mels[idx[b]]));
                targets.push_back(*caps[b]);
            }
            loss = caption_batch_loss(model.decoder, memories, targets, plan.parallel);
            int64_t tokens = 0;
            for (const auto* c : caps) tokens += int64_t(c->size()) - 1;
            extra["tokens_or_pairs"] = tokens;
            if (step % cfg.train.log_every == 0 || step == cfg.train.steps)
                extra["token_acc"] = batch_token_accuracy(model, memories, caps);
        }

        StepStats st;
        try {
            st = apply_step(loss, params, opt, ids, cfg.train.lr, cfg.train.warmup);
        } catch (const TrainAbort& e) {
            json diag = {{"step", step}, {"message", e.what()}, {"batch_ids", e.batch_ids},
                         {"config_hash", hash}};
            std::ofstream af(fs::path(run_dir) / "abort.json", std::ios::binary);
            af << diag.dump(2) << "\n";
            throw;
        }
        res.final_loss = st.loss;

        if (step % cfg.train.log_every == 0 || step == cfg.train.steps) {
            json line = {{"step", step},
                         {"objective", cfg.objective},
                         {"loss", st.loss},
                         {"lr", st.lr}};
            for (auto& [k, v] : extra.items()) line[k] = v;
            log << line.dump() << "\n";
            log.flush();
        }
        if (step % cfg.train.ckpt_every == 0 || step == cfg.train.steps) save_ck(step);
    }
    if (start >= cfg.train.steps && !fs::exists(ckpt_path)) save_ck(start);
    return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kKinds = {"tone", "chirp", "noise", "seq"};
const std::vector<std::string> kBands = {"low", "high"};

int kind_class(const std::string& id) {
    auto k = synth_kind(id);
    for (size_t i = 0; i < kKinds.size(); ++i)
        if (kKinds[i] == k) return int(i);
    throw ValueError("unknown synthetic kind in id: " + id);
}

std::vector<int> attr_multihot(const std::string& id) {
    std::vector<int> row(kKinds.size() + kBands.size(), 0);
    row[size_t(kind_class(id))] = 1;
    auto band = synth_band(id);
    for (size_t i = 0; i < kBands.size(); ++i)
        if (kBands[i] == band) row[kKinds.size() + i] = 1;
    return row;
}

CaptionModel clone_model(const CaptionModel& src, const ModelConfig& cfg) {
    CaptionModel dst;
    dst.init(cfg, 0);
    auto sp = src.params();
    auto dp = dst.params();
    for (size_t i = 0; i < sp.size(); ++i)
        std::copy(sp[i].second.data(), sp[i].second.data() + sp[i].second.numel(),
                  dp[i].second.data());
    return dst;
}

}  // namespace

std::vector<EvalEntry> run_eval_tasks(const ExperimentConfig& cfg, const std::string& run_dir,
                                      const std::string& checkpoint_path,
                                      const std::vector<std::string>& tasks,
                                      const std::string& eval_manifest,
                                      const std::string& export_emb) {
    cfg.validate();
    const std::string hash = config_hash_hex(cfg);
    const std::string bpe_path = (fs::path(run_dir) / "bpe.vocab").string();
    if (!fs::exists(bpe_path)) throw IoError("no tokenizer at " + bpe_path + "; train first");
    const std::string manifest = eval_manifest.empty() ? cfg.data.manifest : eval_manifest;
    auto data = load_corpus_data(manifest, 0, cfg.data.seed, cfg.model.vocab, bpe_path);

    CaptionModel model;
    model.init(cfg.model, Rng::derive(cfg.data.seed, "model-init"));
    auto params = model.params();
    load_into(checkpoint_path, params);

    const size_t n = data.records.size();
    std::vector<FrameEmbeddings> encs;
    {
        NoGradGuard ng;
        for (size_t i = 0; i < n; ++i) encs.push_back(model.audio.encode(data.mels[i]));
    }
    std::vector<AlignPair> pairs;
    for (size_t i = 0; i < n; ++i)
        pairs.push_back({data.mels[i], data.tokens[i][0], data.records[i].audio_id});

    auto audio_rows = [&] {
        NoGradGuard ng;
        std::vector<std::vector<double>> rows;
        for (size_t i = 0; i < n; ++i) {
            auto e = model.head.project_audio(encs[i]);
            rows.emplace_back(e.data(), e.data() + e.numel());
        }
        return rows;
    };
    auto text_rows = [&] {
        NoGradGuard ng;
        std::vector<std::vector<double>> rows;
        for (size_t i = 0; i < n; ++i) {
            auto e = model.head.project_text(model.text.encode(data.tokens[i][0]));
            rows.emplace_back(e.data(), e.data() + e.numel());
        }
        return rows;
    };

    auto probe_data = [&](bool multi) {
        Rng rs(Rng::derive(cfg.data.seed, "probe-split"));
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        rs.shuffle(order);
        if (n < 8) throw ValueError("need at least 8 clips for probing, have " +
                                    std::to_string(n));
        ProbeData train, eval_d;
        for (size_t k = 0; k < n; ++k) {
            auto& dst = k < n / 2 ? train : eval_d;
            size_t i = order[k];
            dst.x.push_back(encs[i]);
            if (multi)
                dst.y_multi.push_back(attr_multihot(data.records[i].audio_id));
            else
                dst.y_single.push_back(kind_class(data.records[i].audio_id));
        }
        return std::make_pair(train, eval_d);
    };

    std::vector<EvalEntry> entries;
    auto push = [&](const std::string& task, const std::string& pooling,
                    const std::string& metric, double value, int n_eval) {
        entries.push_back({checkpoint_path, task, pooling, metric, value, n_eval, hash});
    };

    for (const auto& task : tasks) {
        if (task == "retrieval") {
            std::vector<int> ks;
            for (int k : {1, 5, 10})
                if (size_t(k) <= n) ks.push_back(k);
            auto r = retrieval_eval(audio_rows(), text_rows(), ks);
            for (int k : ks) {
                push(task, "mean", "t2a_recall@" + std::to_string(k), r.text_to_audio[k],
                     int(n));
                push(task, "mean", "a2t_recall@" + std::to_string(k), r.audio_to_text[k],
                     int(n));
            }
        } else if (task == "caption") {
            NoGradGuard ng;
            double sum = 0.0;
            const int max_len = std::min(cfg.model.dec.max_tokens - 1, 24);
            for (size_t i = 0; i < n; ++i) {
                auto ids = greedy_decode(model.decoder, encs[i], max_len);
                auto text = data.vocab.decode(ids);
                double best = 0.0;
                for (const auto& ref : data.records[i].captions)
                    best = std::max(best, rouge_l(text, ref));
                sum += best;
            }
            push(task, "none", "rougeL", sum / double(n), int(n));
        } else if (task.rfind("probe_", 0) == 0) {
            const bool multi = task.find("attr") != std::string::npos;
            const bool mhap = task.find("mhap") != std::string::npos;
            ProbeTask pt;
            pt.kind = multi ? ProbeTask::Kind::multi_label : ProbeTask::Kind::single_label;
            pt.metric = multi ? ProbeTask::Metric::mean_ap : ProbeTask::Metric::accuracy;
            pt.pooling = mhap ? ProbeTask::Pooling::mhap : ProbeTask::Pooling::mean;
            pt.n_classes = multi ? int(kKinds.size() + kBands.size()) : int(kKinds.size());
            auto [train, eval_d] = probe_data(multi);
            auto r = train_probe(train, eval_d, pt, 30, 1e-3, 256,
                                 Rng::derive(cfg.data.seed, "probe-" + task));
            push(task, mhap ? "mhap" : "mean", r.metric_name, r.value, r.n_eval);
        } else if (task == "align_retrieval" || task == "align_caption") {
            auto clone = clone_model(model, cfg.model);
            auto r = run_alignment(clone, pairs,
                                   task == "align_retrieval" ? "retrieval" : "captioning",
                                   cfg.eval.align_steps, cfg.eval.align_lr,
                                   Rng::derive(cfg.data.seed, task));
            push(task, "mean", r.metric_name, r.value, int(n));
        } else {
            throw ConfigError("unknown eval task \"" + task + "\"");
        }
    }

    if (!export_emb.empty()) export_embeddings(model, pairs, export_emb);
    return entries;
}

void write_eval_report(const std::string& path, const std::vector<EvalEntry>& entries) {
    json arr = json::array();
    for (const auto& e : entries)
        arr.push_back({{"checkpoint", e.checkpoint},
                       {"task", e.task},
                       {"pooling", e.pooling},
                       {"metric_name", e.metric_name},
                       {"value", e.value},
                       {"n_eval", e.n_eval},
                       {"config_hash", e.config_hash}});
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << arr.dump(2) << "\n";
}

std::vector<EvalEntry> read_eval_report(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    json arr = json::parse(f, nullptr, true);
    std::vector<EvalEntry> out;
    for (const auto& e : arr)
        out.push_back({e.value("checkpoint", ""), e.value("task", ""), e.value("pooling", ""),
                       e.value("metric_name", ""), e.value("value", 0.0), e.value("n_eval", 0),
                       e.value("config_hash", "")});
    return out;
}

// ---------------------------------------------------------------------------
// Scaling sweep
// ---------------------------------------------------------------------------

SweepResult run_scaling_sweep(const ExperimentConfig& cfg, const SweepOptions& opt,
                              const std::string& out_dir) {
    cfg.validate();
    if (opt.sizes.empty() || opt.seeds.empty())
        throw ConfigError("sweep needs at least one size and one seed");
    for (size_t i = 1; i < opt.sizes.size(); ++i)
        if (opt.sizes[i] <= opt.sizes[i - 1])
            throw ConfigError("sweep sizes must be strictly increasing");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    auto rep = ingest(cfg.data.manifest);
    auto records = consolidate(rep.records);
    const int64_t n = int64_t(records.size());
    const int64_t max_size = opt.sizes.back();

    int64_t holdout = opt.eval_holdout;
    if (holdout < 0) holdout = std::min<int64_t>(32, std::max<int64_t>(8, n / 8));

    auto shuffled = records;
    Rng hr(Rng::derive(cfg.data.seed, "holdout"));
    hr.shuffle(shuffled);

    std::vector<CaptionRecord> pool, eval_records;
    if (holdout > 0) {
        if (max_size > n - holdout)
            throw ValueError("largest sweep size " + std::to_string(max_size) + " leaves no " +
                             std::to_string(holdout) + "-pair holdout in a " + std::to_string(n) +
                             "-pair corpus; add data or set eval_holdout=0");
        pool.assign(shuffled.begin(), shuffled.end() - holdout);
        eval_records.assign(shuffled.end() - holdout, shuffled.end());
    } else {
        if (max_size > n)
            throw ValueError("largest sweep size exceeds the corpus (" + std::to_string(n) + ")");
        pool = records;
        eval_records.assign(shuffled.begin(),
                            shuffled.begin() + std::min<int64_t>(32, n));
    }

    const std::string eval_manifest = (fs::path(out_dir) / "eval.jsonl").string();
    write_manifest(eval_manifest, eval_records);

    auto subsets = sample_subsets(pool, opt.sizes, cfg.data.seed);
    // nesting asserted before any training starts
    for (size_t i = 1; i < subsets.size(); ++i) {
        std::set<std::string> bigger;
        for (const auto& r : subsets[i]) bigger.insert(r.audio_id);
        for (const auto& r : subsets[i - 1])
            if (!bigger.count(r.audio_id))
                throw ValueError("subset nesting violated at size " +
                                 std::to_string(opt.sizes[i - 1]));
    }

    std::vector<std::string> subset_manifests;
    for (size_t i = 0; i < subsets.size(); ++i) {
        auto p = (fs::path(out_dir) / ("subset_" + std::to_string(opt.sizes[i]) + ".jsonl"))
                     .string();
        write_manifest(p, subsets[i]);
        subset_manifests.push_back(p);
    }

    SweepResult res;
    res.csv_path = (fs::path(out_dir) / "sweep.csv").string();
    std::ofstream csv(res.csv_path, std::ios::binary);
    if (!csv) throw IoError("cannot write " + res.csv_path);
    csv << "size,objective,init,task,metric,value,seed,config_hash\n";

    for (uint64_t seed : opt.seeds) {
        for (size_t i = 0; i < opt.sizes.size(); ++i) {
            ExperimentConfig cell = cfg;
            cell.data.manifest = subset_manifests[i];
            cell.data.subset = 0;
            cell.data.seed = seed;
            const std::string dir =
                (fs::path(out_dir) / ("cell_s" + std::to_string(opt.sizes[i]) + "_r" +
                                      std::to_string(seed)))
                    .string();
            auto pr = run_pretrain(cell, dir);
            auto entries = run_eval_tasks(cell, dir, pr.checkpoint_path, cell.eval.tasks,
                                          eval_manifest);
            write_eval_report((fs::path(dir) / "eval_report.json").string(), entries);
            for (const auto& e : entries)
                csv << opt.sizes[i] << ',' << cell.objective << ',' << cell.init << ','
                    << e.task << ',' << e.metric_name << ',' << fmt_metric(e.value) << ','
                    << seed << ',' << e.config_hash << "\n";
            csv.flush();
            res.cells.push_back({opt.sizes[i], seed, entries});
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

struct SweepRow {
    int64_t size;
    std::string objective, init, task, metric, value;
    uint64_t seed;
    std::string hash;
};

std::vector<SweepRow> parse_sweep_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    std::vector<SweepRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (first) {
            first = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        if (cols.size() != 8) continue;
        rows.push_back({std::stoll(cols[0]), cols[1], cols[2], cols[3], cols[4], cols[5],
                        std::stoull(cols[6]), cols[7]});
    }
    return rows;
}

std::string scaling_svg(const std::vector<SweepRow>& rows, const std::string& task,
                        const std::string& metric) {
    std::vector<int64_t> sizes;
    std::map<int64_t, std::vector<double>> by_size;
    for (const auto& r : rows) {
        if (r.task != task || r.metric != metric) continue;
        by_size[r.size].push_back(std::stod(r.value));
    }
    for (auto& [s, v] : by_size) sizes.push_back(s);
    if (sizes.empty()) return "";

    const double w = 640, h = 400, ml = 70, mr = 30, mt = 40, mb = 50;
    auto xpos = [&](int64_t size) {
        double lo = std::log(double(sizes.front())), hi = std::log(double(sizes.back()));
        double t = sizes.size() == 1 ? 0.5 : (std::log(double(size)) - lo) / (hi - lo);
        return ml + t * (w - ml - mr);
    };
    auto ypos = [&](double v) { return mt + (1.0 - v) * (h - mt - mb); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << int(w) << "\" height=\""
        << int(h) << "\" viewBox=\"0 0 " << int(w) << " " << int(h) << "\">\n";
    svg << "<rect width=\"" << int(w) << "\" height=\"" << int(h) << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << int(w / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
        << task << " / " << metric << " vs corpus size</text>\n";
    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n";
    for (double v : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << ypos(v) + 4
            << "\" text-anchor=\"end\" font-size=\"11\">" << fmt_metric(v).substr(0, 4)
            << "</text>\n";
        svg << "<line x1=\"" << ml - 4 << "\" y1=\"" << ypos(v) << "\" x2=\"" << ml << "\" y2=\""
            << ypos(v) << "\" stroke=\"black\"/>\n";
    }
    for (int64_t s : sizes) {
        svg << "<text x=\"" << xpos(s) << "\" y=\"" << h - mb + 18
            << "\" text-anchor=\"middle\" font-size=\"11\">" << s << "</text>\n";
        svg << "<line x1=\"" << xpos(s) << "\" y1=\"" << h - mb << "\" x2=\"" << xpos(s)
            << "\" y2=\"" << h - mb + 4 << "\" stroke=\"black\"/>\n";
    }
    // per-seed points
    for (const auto& [s, vals] : by_size)
        for (double v : vals)
            svg << "<circle cx=\"" << xpos(s) << "\" cy=\"" << ypos(v)
                << "\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.5\"/>\n";
    // mean polyline
    svg << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (int64_t s : sizes) {
        const auto& vals = by_size[s];
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= double(vals.size());
        svg << xpos(s) << "," << ypos(mean) << " ";
    }
    svg << "\"/>\n</svg>\n";
    return svg.str();
}

}  // namespace

void write_report(const std::string& run_dir) {
    std::vector<std::string> report_paths, csv_paths, log_dirs_without_eval;
    if (fs::exists(run_dir)) {
        std::vector<fs::path> all;
        all.push_back(run_dir);
        for (auto it = fs::recursive_directory_iterator(run_dir);
             it != fs::recursive_directory_iterator(); ++it)
            all.push_back(it->path());
        std::sort(all.begin(), all.end());
        for (const auto& p : all) {
            if (!fs::is_regular_file(p)) {
                if (fs::is_directory(p) && fs::exists(p / "train_log.jsonl") &&
                    !fs::exists(p / "eval_report.json"))
                    log_dirs_without_eval.push_back(p.string());
                continue;
            }
            if (p.filename() == "eval_report.json") report_paths.push_back(p.string());
            if (p.filename() == "sweep.csv") csv_paths.push_back(p.string());
        }
    }

    std::vector<EvalEntry> entries;
    for (const auto& p : report_paths)
        for (auto& e : read_eval_report(p)) entries.push_back(e);
    std::vector<SweepRow> sweep_rows;
    for (const auto& p : csv_paths)
        for (auto& r : parse_sweep_csv(p)) sweep_rows.push_back(r);

    std::ostringstream md;
    md << "# Run report\n\n";
    if (entries.empty() && sweep_rows.empty()) {
        md << "_no results_\n";
    } else {
        if (!entries.empty()) {
            std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
                return std::tie(a.config_hash, a.task, a.metric_name) <
                       std::tie(b.config_hash, b.task, b.metric_name);
            });
            md << "## Evaluations\n\n";
            md << "| config | task | pooling | metric | value | n |\n";
            md << "|---|---|---|---|---|---|\n";
            for (const auto& e : entries)
                md << "| " << e.config_hash << " | " << e.task << " | " << e.pooling << " | "
                   << e.metric_name << " | " << fmt_metric(e.value) << " | " << e.n_eval
                   << " |\n";
            md << "\n";
        }
        if (!sweep_rows.empty()) {
            md << "## Scaling sweep\n\n";
            md << "| size | seed | task | metric | value | config |\n";
            md << "|---|---|---|---|---|---|\n";
            for (const auto& r : sweep_rows)
                md << "| " << r.size << " | " << r.seed << " | " << r.task << " | " << r.metric
                   << " | " << r.value << " | " << r.hash << " |\n";
            md << "\n";

            // one curve: prefer the retrieval r@1 trend, else the first metric
            std::string task = sweep_rows[0].task, metric = sweep_rows[0].metric;
            for (const auto& r : sweep_rows)
                if (r.task == "retrieval" && r.metric == "t2a_recall@1") {
                    task = r.task;
                    metric = r.metric;
                    break;
                }
            auto svg = scaling_svg(sweep_rows, task, metric);
            if (!svg.empty()) {
                std::ofstream sf(fs::path(run_dir) / "scaling.svg", std::ios::binary);
                sf << svg;
                md << "![scaling](scaling.svg)\n\n";
            }
        }
    }
    if (!log_dirs_without_eval.empty()) {
        md << "## Missing\n\n";
        for (const auto& d : log_dirs_without_eval)
            md << "- " << d << ": training log present, no eval report\n";
    }

    std::error_code ec;
    fs::create_directories(run_dir, ec);
    std::ofstream f(fs::path(run_dir) / "report.md", std::ios::binary);
    if (!f) throw IoError("cannot write report.md in " + run_dir);
    f << md.str();
}

}  // namespace caplab
