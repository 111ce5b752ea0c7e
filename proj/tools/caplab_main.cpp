#include <cstdint>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "caplab/corpus.hpp"
#include "caplab/error.hpp"
#include "caplab/experiment.hpp"
#include "caplab/kernels.hpp"
#include "caplab/synth.hpp"

namespace {

using nlohmann::json;

bool g_json_errors = false;

void emit_error(const std::string& kind, const std::string& message,
                const std::vector<std::string>* batch_ids = nullptr) {
    if (g_json_errors) {
        json j = {{"error", kind}, {"message", message}};
        if (batch_ids) j["batch_ids"] = *batch_ids;
        std::cerr << j.dump() << "\n";
    } else {
        std::cerr << "error (" << kind << "): " << message << "\n";
        if (batch_ids && !batch_ids->empty()) {
            std::cerr << "  batch:";
            for (const auto& id : *batch_ids) std::cerr << " " << id;
            std::cerr << "\n";
        }
    }
}

std::vector<int64_t> parse_int_list(const std::string& csv, const char* what) {
    std::vector<int64_t> out;
    std::string cur;
    std::stringstream ss(csv);
    while (std::getline(ss, cur, ',')) {
        if (cur.empty()) continue;
        try {
            out.push_back(std::stoll(cur));
        } catch (const std::exception&) {
            throw caplab::ConfigError(std::string(what) + ": bad integer \"" + cur + "\"");
        }
    }
    if (out.empty()) throw caplab::ConfigError(std::string(what) + ": empty list");
    return out;
}

std::vector<std::string> parse_str_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(csv);
    while (std::getline(ss, cur, ','))
        if (!cur.empty()) out.push_back(cur);
    return out;
}

caplab::ExperimentConfig read_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw caplab::IoError("cannot read config " + path);
    json j = json::parse(f, nullptr, true);
    return caplab::config_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
    using namespace caplab;
    namespace fs = std::filesystem;

    CLI::App app{"audio-language pretraining lab"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_flag("--json-errors", g_json_errors, "one-line JSON errors on stderr");
    app.add_option("--threads", threads, "worker thread cap (0 = default)");

    // corpus ---------------------------------------------------------------
    auto* corpus = app.add_subcommand("corpus", "manifest tooling");
    corpus->require_subcommand(1);

    auto* cb = corpus->add_subcommand("build", "merge + consolidate + filter manifests");
    std::vector<std::string> cb_in;
    std::string cb_out, cb_blocklist;
    double cb_max_dur = 10.0;
    cb->add_option("--manifest", cb_in, "input manifest, repeatable")->required();
    cb->add_option("--out", cb_out, "output manifest")->required();
    cb->add_option("--max-duration", cb_max_dur, "drop clips longer than this, seconds");
    cb->add_option("--blocklist", cb_blocklist, "file of audio_ids to drop");

    auto* cs = corpus->add_subcommand("stats", "lexical diversity as JSON on stdout");
    std::string cs_manifest;
    cs->add_option("--manifest", cs_manifest)->required();

    auto* cu = corpus->add_subcommand("subset", "nested seeded subsets");
    std::string cu_manifest, cu_outdir, cu_sizes;
    uint64_t cu_seed = 0;
    cu->add_option("--manifest", cu_manifest)->required();
    cu->add_option("--out-dir", cu_outdir)->required();
    cu->add_option("--sizes", cu_sizes, "comma-separated, ascending")->required();
    cu->add_option("--seed", cu_seed);

    // gen-synth ------------------------------------------------------------
    auto* gs = app.add_subcommand("gen-synth", "synthetic audio-caption corpus");
    std::string gs_out;
    SyntheticSpec spec;
    gs->add_option("--out", gs_out)->required();
    gs->add_option("--n", spec.n_pairs, "number of clips");
    gs->add_option("--seed", spec.seed);
    gs->add_option("--multi-rate", spec.multi_caption_rate, "second-caption probability");
    gs->add_option("--dur-min", spec.dur_min);
    gs->add_option("--dur-max", spec.dur_max);

    // train ----------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "pretrain per config into a run directory");
    std::string tr_config, tr_run;
    tr->add_option("--config", tr_config, "experiment config JSON");
    tr->add_option("--run-dir", tr_run)->required();
    int ov_steps = 0, ov_batch = 0;
    double ov_lr = 0, ov_rho = 0;
    uint64_t ov_seed = 0;
    std::string ov_manifest, ov_objective, ov_init;
    auto* o_steps = tr->add_option("--steps", ov_steps);
    auto* o_lr = tr->add_option("--lr", ov_lr);
    auto* o_batch = tr->add_option("--batch", ov_batch);
    auto* o_rho = tr->add_option("--rho", ov_rho);
    auto* o_seed = tr->add_option("--seed", ov_seed);
    auto* o_manifest = tr->add_option("--manifest", ov_manifest);
    auto* o_objective = tr->add_option("--objective", ov_objective);
    auto* o_init = tr->add_option("--init", ov_init, "scratch or checkpoint path");

    // eval -----------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "run eval tasks against a checkpoint");
    std::string ev_run, ev_config, ev_ckpt, ev_tasks, ev_manifest, ev_export;
    ev->add_option("--run-dir", ev_run)->required();
    ev->add_option("--config", ev_config, "default: <run-dir>/config.json");
    ev->add_option("--checkpoint", ev_ckpt, "default: <run-dir>/model.ckpt");
    ev->add_option("--tasks", ev_tasks, "comma-separated; default from config");
    ev->add_option("--eval-manifest", ev_manifest);
    ev->add_option("--export-emb", ev_export, "also dump clip embeddings here");

    // sweep ----------------------------------------------------------------
    auto* sw = app.add_subcommand("sweep", "scaling sweep over corpus sizes and seeds");
    std::string sw_config, sw_run, sw_sizes = "16,64,256", sw_seeds = "0,1,2";
    int sw_holdout = -1;
    sw->add_option("--config", sw_config);
    sw->add_option("--run-dir", sw_run)->required();
    sw->add_option("--sizes", sw_sizes);
    sw->add_option("--seeds", sw_seeds);
    sw->add_option("--holdout", sw_holdout, "-1 auto, 0 overlapping eval subset");

    // report ---------------------------------------------------------------
    auto* rp = app.add_subcommand("report", "Markdown + SVG report from run artifacts");
    std::string rp_run;
    rp->add_option("--run-dir", rp_run)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (g_json_errors) {
            emit_error("usage", e.what());
            return 1;
        }
        app.exit(e);
        return 1;
    }

    if (threads > 0) kernels::set_threads(threads);

    try {
        if (cb->parsed()) {
            std::vector<CaptionRecord> merged;
            int64_t skipped = 0;
            for (const auto& m : cb_in) {
                auto rep = ingest(m);
                skipped += rep.skipped;
                merged.insert(merged.end(), rep.records.begin(), rep.records.end());
            }
            auto records = consolidate(merged);
            std::set<std::string> block;
            if (!cb_blocklist.empty()) block = read_blocklist(cb_blocklist);
            auto filt = filter_corpus(records, cb_max_dur, block);
            write_manifest(cb_out, filt.kept);
            json out = {{"written", cb_out},
                        {"records", filt.kept.size()},
                        {"dropped_duration", filt.dropped_duration},
                        {"dropped_overlap", filt.dropped_overlap},
                        {"skipped_lines", skipped}};
            std::cout << out.dump() << "\n";
        } else if (cs->parsed()) {
            auto rep = ingest(cs_manifest);
            auto records = consolidate(rep.records);
            std::cout << stats_to_json(lexical_stats(records)) << "\n";
        } else if (cu->parsed()) {
            auto sizes = parse_int_list(cu_sizes, "--sizes");
            auto rep = ingest(cu_manifest);
            auto records = consolidate(rep.records);
            auto subsets = sample_subsets(records, sizes, cu_seed);
            fs::create_directories(cu_outdir);
            json paths = json::array();
            for (size_t i = 0; i < subsets.size(); ++i) {
                auto p = (fs::path(cu_outdir) /
                          ("subset_" + std::to_string(sizes[i]) + ".jsonl"))
                             .string();
                write_manifest(p, subsets[i]);
                paths.push_back(p);
            }
            std::cout << json{{"subsets", paths}}.dump() << "\n";
        } else if (gs->parsed()) {
            auto r = gen_synthetic_corpus(spec, gs_out);
            json out = {{"manifest", r.manifest_path},
                        {"n_clips", r.n_clips},
                        {"n_caption_lines", r.n_caption_lines}};
            std::cout << out.dump() << "\n";
        } else if (tr->parsed()) {
            ExperimentConfig cfg;
            if (!tr_config.empty()) cfg = read_config(tr_config);
            if (o_steps->count()) cfg.train.steps = ov_steps;
            if (o_lr->count()) cfg.train.lr = ov_lr;
            if (o_batch->count()) cfg.train.batch = ov_batch;
            if (o_rho->count()) cfg.train.rho = ov_rho;
            if (o_seed->count()) cfg.data.seed = ov_seed;
            if (o_manifest->count()) cfg.data.manifest = ov_manifest;
            if (o_objective->count()) cfg.objective = ov_objective;
            if (o_init->count()) cfg.init = ov_init;
            auto r = run_pretrain(cfg, tr_run);
            json out = {{"steps", r.steps},
                        {"final_loss", r.final_loss},
                        {"checkpoint", r.checkpoint_path},
                        {"log", r.log_path},
                        {"config_hash", r.config_hash}};
            std::cout << out.dump() << "\n";
        } else if (ev->parsed()) {
            std::string cfg_path =
                ev_config.empty() ? (fs::path(ev_run) / "config.json").string() : ev_config;
            ExperimentConfig cfg = read_config(cfg_path);
            std::string ckpt =
                ev_ckpt.empty() ? (fs::path(ev_run) / "model.ckpt").string() : ev_ckpt;
            auto tasks = ev_tasks.empty() ? cfg.eval.tasks : parse_str_list(ev_tasks);
            auto entries = run_eval_tasks(cfg, ev_run, ckpt, tasks, ev_manifest, ev_export);
            auto report_path = (fs::path(ev_run) / "eval_report.json").string();
            write_eval_report(report_path, entries);
            json arr = json::array();
            for (const auto& e : entries)
                arr.push_back({{"task", e.task},
                               {"pooling", e.pooling},
                               {"metric", e.metric_name},
                               {"value", e.value},
                               {"n_eval", e.n_eval},
                               {"config_hash", e.config_hash}});
            std::cout << json{{"report", report_path}, {"entries", arr}}.dump() << "\n";
        } else if (sw->parsed()) {
            ExperimentConfig cfg;
            if (!sw_config.empty()) cfg = read_config(sw_config);
            SweepOptions opt;
            opt.sizes = parse_int_list(sw_sizes, "--sizes");
            auto seeds = parse_int_list(sw_seeds, "--seeds");
            for (int64_t s : seeds) {
                if (s < 0) throw ConfigError("--seeds must be non-negative");
                opt.seeds.push_back(uint64_t(s));
            }
            opt.eval_holdout = sw_holdout;
            auto r = run_scaling_sweep(cfg, opt, sw_run);
            std::cout << json{{"csv", r.csv_path}, {"cells", r.cells.size()}}.dump() << "\n";
        } else if (rp->parsed()) {
            write_report(rp_run);
            std::cout << json{{"report", (fs::path(rp_run) / "report.md").string()}}.dump()
                      << "\n";
        }
        return 0;
    } catch (const TrainAbort& e) {
        emit_error("train_abort", e.what(), &e.batch_ids);
        return 2;
    } catch (const ConfigError& e) {
        emit_error("config", e.what());
        return 1;
    } catch (const ValueError& e) {
        emit_error("value", e.what());
        return 1;
    } catch (const ShapeError& e) {
        emit_error("shape", e.what());
        return 1;
    } catch (const IndexError& e) {
        emit_error("index", e.what());
        return 1;
    } catch (const IoError& e) {
        emit_error("io", e.what());
        return 1;
    } catch (const std::exception& e) {
        emit_error("unexpected", e.what());
        return 2;
    }
}
