#pragma once

// End-to-end runners behind the CLI subcommands: dataset generation, staged
// training with per-stage checkpoints, metric CSV evaluation, and the
// attention/ablation/sweep analysis reports. All files are written to a
// temporary name and renamed, so a failed run never leaves partial output.

#include <filesystem>
#include <fstream>

#include "mlr/checkpoint.hpp"
#include "mlr/config.hpp"
#include "mlr/metrics.hpp"

namespace mlr {

namespace fs = std::filesystem;

/* ---- file helpers ----------------------------------------------------------- */

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_text_atomic(const std::string& path, const std::string& text) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot open for writing: " + tmp.string());
        f << text;
        f.flush();
        if (!f) throw DataError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw DataError("rename failed for " + path + ": " + ec.message());
}

/* ---- deterministic content hashing ------------------------------------------- */

// Hash a CSV with the named columns removed from every data row, so wallclock
// fields can be excluded from determinism comparisons. '#' comment lines and
// the header are hashed with the same columns dropped.
inline uint64_t csv_hash_excluding(const std::string& text,
                                   const std::vector<std::string>& drop) {
    auto split = [](const std::string& line) {
        std::vector<std::string> out;
        size_t start = 0;
        while (true) {
            const size_t c = line.find(',', start);
            out.push_back(line.substr(start, c == std::string::npos ? c : c - start));
            if (c == std::string::npos) break;
            start = c + 1;
        }
        return out;
    };
    uint64_t h = fnv1a64(std::string_view("csv"));
    std::vector<size_t> drop_idx;
    bool header_seen = false;
    size_t pos = 0;
    while (pos <= text.size()) {
        const size_t nl = text.find('\n', pos);
        const std::string line =
            text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = (nl == std::string::npos) ? text.size() + 1 : nl + 1;
        if (line.empty()) continue;
        if (line[0] == '#') {
            h = fnv1a64(line.data(), line.size(), h);
            continue;
        }
        auto fields = split(line);
        if (!header_seen) {
            header_seen = true;
            for (size_t i = 0; i < fields.size(); ++i)
                if (std::find(drop.begin(), drop.end(), fields[i]) != drop.end())
                    drop_idx.push_back(i);
        }
        std::string kept;
        for (size_t i = 0; i < fields.size(); ++i) {
            if (std::find(drop_idx.begin(), drop_idx.end(), i) != drop_idx.end()) continue;
            kept += fields[i];
            kept += '|';
        }
        h = fnv1a64(kept.data(), kept.size(), h);
    }
    return h;
}

// Hash a JSONL stream with the named keys erased from every record.
inline uint64_t jsonl_hash_excluding(const std::string& text,
                                     const std::vector<std::string>& drop) {
    uint64_t h = fnv1a64(std::string_view("jsonl"));
    size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        const size_t nl = text.find('\n', pos);
        const std::string line =
            text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = (nl == std::string::npos) ? text.size() + 1 : nl + 1;
        ++lineno;
        if (line.empty()) continue;
        json j = parse_json_text(line, "line " + std::to_string(lineno));
        for (const auto& key : drop) j.erase(key);
        const std::string dumped = j.dump();
        h = fnv1a64(dumped.data(), dumped.size(), h);
    }
    return h;
}

/* ---- gen-data ----------------------------------------------------------------- */

struct GenDataResult {
    size_t n_train = 0;
    size_t n_test = 0;
    std::string content_hash;
};

inline GenDataResult run_gen_data(const GenSpec& spec, const std::string& out_dir) {
    const Dataset data = generate_dataset(spec);
    const std::string train_text = jsonl_string(data.train);
    const std::string test_text = jsonl_string(data.test);
    const uint64_t h =
        fnv1a64(test_text.data(), test_text.size(),
                fnv1a64(train_text.data(), train_text.size(), fnv1a64(std::string_view("grid-sum"))));

    GenDataResult r;
    r.n_train = data.train.size();
    r.n_test = data.test.size();
    r.content_hash = hex64(h);

    json manifest{{"spec", gen_spec_to_json(spec)},
                  {"counts", json{{"train", r.n_train}, {"test", r.n_test}}},
                  {"content_hash", r.content_hash}};
    write_text_atomic(out_dir + "/train.jsonl", train_text);
    write_text_atomic(out_dir + "/test.jsonl", test_text);
    write_text_atomic(out_dir + "/manifest.json", manifest.dump(2) + "\n");
    return r;
}

/* ---- train ----------------------------------------------------------------------- */

struct TrainArtifacts {
    std::vector<std::string> checkpoint_paths;  // stage0..stage{N-1}
    std::string log_path;
    std::string config_path;
};

inline TrainArtifacts run_train(const Config& cfg, const std::string& data_dir,
                                const std::string& out_dir, const LogSink& echo = {}) {
    const auto samples = read_jsonl(data_dir + "/train.jsonl");
    const TrainConfig tc = cfg.resolved_train();
    auto params = init_params<float>(cfg.model, cfg.seed);

    TrainArtifacts art;
    std::string log_text;
    const LogSink sink = [&](const EpochLog& e) {
        json line{{"stage", e.stage},
                  {"epoch", e.epoch},
                  {"mean_loss", e.mean_loss},
                  {"wallclock_ms", e.wallclock_ms}};
        log_text += line.dump();
        log_text += '\n';
        if (echo) echo(e);
    };
    const std::function<void(int, const Params<float>&)> after_stage =
        [&](int stage, const Params<float>& p) {
            const std::string path = out_dir + "/stage" + std::to_string(stage) + ".ckpt";
            fs::create_directories(out_dir);
            save_checkpoint(path, p, stage);
            art.checkpoint_paths.push_back(path);
        };
    train_curriculum(params, samples, tc, sink, after_stage);

    art.log_path = out_dir + "/train_log.jsonl";
    art.config_path = out_dir + "/final_config.json";
    write_text_atomic(art.log_path, log_text);
    write_text_atomic(art.config_path, config_to_json(cfg).dump(2) + "\n");
    return art;
}

/* ---- eval -------------------------------------------------------------------------- */

struct EvalRequest {
    std::string ckpt_path;
    std::string data_path;
    std::string report_path;
    std::string per_sample_path;  // empty: skip the per-sample dump
    int n_latent = 3;
    LatentOptions latent;
    int max_new = 64;
};

// run_id: stable digest of the checkpoint bytes, dataset bytes, and the
// evaluation settings — wallclock never enters it.
inline std::string eval_run_id(const std::string& ckpt_bytes, const std::string& data_bytes,
                               const EvalRequest& req) {
    const std::string key = "ckpt=" + hex64(fnv1a64(ckpt_bytes.data(), ckpt_bytes.size())) +
                            ";data=" + hex64(fnv1a64(data_bytes.data(), data_bytes.size())) +
                            ";n_latent=" + std::to_string(req.n_latent) +
                            ";k=" + std::to_string(req.latent.k) +
                            ";excl=" + (req.latent.exclude_previous ? "1" : "0");
    return hex64(fnv1a64(key.data(), key.size()));
}

inline constexpr const char* kEvalCsvHeader =
    "run_id,stage,n_latent,split,accuracy,ar_steps_mean,latency_ms_mean,n_samples";

inline RunMetrics run_eval(const EvalRequest& req) {
    const std::string ckpt_bytes = read_file_bytes(req.ckpt_path);
    const Checkpoint ck = checkpoint_from_bytes(ckpt_bytes);
    const std::string data_bytes = read_file_bytes(req.data_path);
    const auto samples = read_jsonl(req.data_path);

    EvalOptions eo;
    eo.n_latent = req.n_latent;
    eo.latent = req.latent;
    eo.max_new = req.max_new;
    const auto evals = evaluate_samples(ck.params, samples, eo);
    const RunMetrics m = reduce_metrics(evals, req.n_latent);

    const std::string split = fs::path(req.data_path).stem().string();
    std::string csv = std::string(kEvalCsvHeader) + "\n";
    csv += eval_run_id(ckpt_bytes, data_bytes, req) + "," + std::to_string(ck.stage) + "," +
           std::to_string(req.n_latent) + "," + split + "," + fmt6(m.accuracy) + "," +
           fmt6(m.ar_steps_mean) + "," + fmt6(m.latency_ms_mean) + "," +
           std::to_string(m.n_samples) + "\n";
    write_text_atomic(req.report_path, csv);

    if (!req.per_sample_path.empty()) {
        std::string ps = "sample_id,correct,ar_steps,n_latent_eff,latency_ms\n";
        for (const auto& e : evals)
            ps += e.id + "," + (e.correct ? "1" : "0") + "," + std::to_string(e.ar_steps) +
                  "," + std::to_string(e.n_latent_eff) + "," + fmt6(e.latency_ms) + "\n";
        write_text_atomic(req.per_sample_path, ps);
    }
    return m;
}

/* ---- analyze: attention ---------------------------------------------------------------- */

// One row per (sample, latent step) for samples that ran all n_latent steps,
// so every sample_id contributes exactly n_latent rows.
inline size_t run_analyze_attention(const std::string& ckpt_path, const std::string& data_path,
                                    int n_latent, LatentOptions latent,
                                    const std::string& report_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const auto samples = read_jsonl(data_path);
    latent.capture = true;

    EvalOptions eo;
    eo.n_latent = n_latent;
    eo.latent = latent;
    const auto evals = evaluate_samples(ck.params, samples, eo);

    std::string csv = "sample_id,step,R,F\n";
    size_t rows = 0;
    for (const auto& e : evals) {
        if (e.n_latent_eff != n_latent || (int)e.captures.size() != n_latent) continue;
        for (const auto& tp : attention_trajectory(e.captures)) {
            csv += e.id + "," + std::to_string(tp.step) + "," + fmt6(tp.R) + "," +
                   fmt6(tp.F) + "\n";
            ++rows;
        }
    }
    if (n_latent > 0 && rows == 0)
        throw DataError("no sample in " + data_path + " runs " + std::to_string(n_latent) +
                        " latent steps");
    write_text_atomic(report_path, csv);
    return rows;
}

/* ---- analyze: ablation ----------------------------------------------------------------- */

inline constexpr Variant kAblationVariants[] = {
    Variant::full,         Variant::no_latent_text, Variant::no_latent_vision,
    Variant::no_latent_part, Variant::no_cot,         Variant::explicit_cot,
};

// Trains one model per variant under the same schedule and reports RunMetrics
// rows. The header records how each variant's latent block is built.
inline void run_analyze_ablation(const Config& cfg, const std::string& data_dir,
                                 const std::string& out_dir, const std::string& report_path,
                                 const LogSink& echo = {}) {
    const auto train_samples = read_jsonl(data_dir + "/train.jsonl");
    const auto test_samples = read_jsonl(data_dir + "/test.jsonl");

    std::string csv =
        "# ablation block definitions:\n"
        "#   full             step inserts [hidden state, k selected image embeddings]\n"
        "#   no_latent_text   step inserts [k selected image embeddings]; the learned "
        "<latent> embedding keeps the step slot\n"
        "#   no_latent_vision step inserts [hidden state] only\n"
        "#   no_latent_part   step inserts [<latent> token embedding] only (pause-token "
        "baseline)\n"
        "#   no_cot           direct question -> answer fine-tune, no rationale "
        "supervision\n"
        "#   explicit_cot     full rationale supervision at every stage; decodes "
        "rationales at eval\n"
        "variant,accuracy,ar_steps_mean,latency_ms_mean,n_samples\n";

    for (Variant v : kAblationVariants) {
        TrainConfig tc = cfg.resolved_train();
        tc.variant = v;
        auto params = init_params<float>(cfg.model, cfg.seed);
        train_curriculum(params, train_samples, tc, echo);
        fs::create_directories(out_dir);
        save_checkpoint(out_dir + "/ablation_" + variant_str(v) + ".ckpt", params,
                        tc.n_stages - 1);

        const int n_latent = variant_uses_latent(v) ? cfg.latent.n_latent_eval : 0;
        EvalOptions eo;
        eo.n_latent = n_latent;
        // non-latent variants decode directly; their block options never apply
        eo.latent = variant_uses_latent(v) ? tc.latent_options(v) : LatentOptions{};
        const auto evals = evaluate_samples(params, test_samples, eo);
        const RunMetrics m = reduce_metrics(evals, n_latent);
        csv += std::string(variant_str(v)) + "," + fmt6(m.accuracy) + "," +
               fmt6(m.ar_steps_mean) + "," + fmt6(m.latency_ms_mean) + "," +
               std::to_string(m.n_samples) + "\n";
    }
    write_text_atomic(report_path, csv);
}

/* ---- analyze: sweeps ---------------------------------------------------------------------- */

// One trained model per latent-vision width k; the monotone-trend statistic
// (Spearman of k vs accuracy) lands in a trailing comment row.
inline void run_analyze_sweep_k(const Config& cfg, const std::string& data_dir,
                                const std::string& out_dir, const std::vector<int>& k_values,
                                const std::string& report_path, const LogSink& echo = {}) {
    if (k_values.empty()) throw ConfigError("sweep-k needs at least one k value");
    const auto train_samples = read_jsonl(data_dir + "/train.jsonl");
    const auto test_samples = read_jsonl(data_dir + "/test.jsonl");

    std::string csv = "k,accuracy,ar_steps_mean,latency_ms_mean,n_samples\n";
    std::vector<double> ks, accs;
    for (int k : k_values) {
        TrainConfig tc = cfg.resolved_train();
        tc.k = k;
        tc.validate(cfg.model);
        auto params = init_params<float>(cfg.model, cfg.seed);
        train_curriculum(params, train_samples, tc, echo);
        fs::create_directories(out_dir);
        save_checkpoint(out_dir + "/sweep_k" + std::to_string(k) + ".ckpt", params,
                        tc.n_stages - 1);

        EvalOptions eo;
        eo.n_latent = cfg.latent.n_latent_eval;
        eo.latent = tc.latent_options(Variant::full);
        const auto evals = evaluate_samples(params, test_samples, eo);
        const RunMetrics m = reduce_metrics(evals, eo.n_latent);
        csv += std::to_string(k) + "," + fmt6(m.accuracy) + "," + fmt6(m.ar_steps_mean) +
               "," + fmt6(m.latency_ms_mean) + "," + std::to_string(m.n_samples) + "\n";
        ks.push_back((double)k);
        accs.push_back(m.accuracy);
    }
    std::string trend = "nan";
    if (ks.size() >= 2) {
        try {
            trend = fmt6(spearman_rank(ks, accs));
        } catch (const NumericError&) {
            // constant accuracy across k: correlation undefined
        }
    }
    csv += "# spearman_k_accuracy," + trend + "\n";
    write_text_atomic(report_path, csv);
}

// Evaluates existing stage checkpoints at matching latent depth: stage n runs
// n latent steps, for n in 1..3.
inline void run_analyze_sweep_stage(const std::string& ckpt_dir, const std::string& data_path,
                                    const LatentOptions& latent,
                                    const std::string& report_path) {
    const auto samples = read_jsonl(data_path);
    std::string csv = "stage,n_latent,accuracy,ar_steps_mean,latency_ms_mean,n_samples\n";
    for (int stage = 1; stage <= 3; ++stage) {
        const std::string path = ckpt_dir + "/stage" + std::to_string(stage) + ".ckpt";
        const Checkpoint ck = load_checkpoint(path);
        EvalOptions eo;
        eo.n_latent = stage;
        eo.latent = latent;
        const auto evals = evaluate_samples(ck.params, samples, eo);
        const RunMetrics m = reduce_metrics(evals, stage);
        csv += std::to_string(stage) + "," + std::to_string(stage) + "," + fmt6(m.accuracy) +
               "," + fmt6(m.ar_steps_mean) + "," + fmt6(m.latency_ms_mean) + "," +
               std::to_string(m.n_samples) + "\n";
    }
    write_text_atomic(report_path, csv);
}

}  // namespace mlr
