#include <CLI11.hpp>

#include <iostream>

#include "mlr/pipeline.hpp"

using namespace mlr;

namespace {

Config load_config_or_defaults(const std::string& path) {
    if (path.empty()) return Config{};
    return config_from_text(read_file_bytes(path), path);
}

void echo_epoch(const EpochLog& e) {
    std::cout << "stage " << e.stage << " epoch " << e.epoch << " loss " << fmt6(e.mean_loss)
              << " (" << (long long)e.wallclock_ms << " ms)" << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent multimodal reasoning pipeline"};
    app.require_subcommand(1);

    /* gen-data ------------------------------------------------------------- */
    auto* gen = app.add_subcommand("gen-data", "generate a Grid-Sum dataset");
    std::string gd_task = "grid-sum";
    GenSpec gd_spec;
    std::string gd_out;
    gen->add_option("--task", gd_task, "task name")->capture_default_str();
    gen->add_option("--n", gd_spec.n, "total sample count")->capture_default_str();
    gen->add_option("--seed", gd_spec.seed, "generation seed")->capture_default_str();
    gen->add_option("--hop-count", gd_spec.hop_count, "hops in full-length samples")
        ->capture_default_str();
    gen->add_option("--short-fraction", gd_spec.short_fraction,
                    "fraction held to 1-2 rationale steps")
        ->capture_default_str();
    gen->add_option("--out", gd_out, "output directory")->required();
    gen->callback([&] {
        if (gd_task != "grid-sum") throw ConfigError("unknown task: " + gd_task);
        const auto r = run_gen_data(gd_spec, gd_out);
        std::cout << "wrote " << r.n_train << " train / " << r.n_test << " test samples to "
                  << gd_out << " (content " << r.content_hash << ")\n";
    });

    /* train ------------------------------------------------------------------ */
    auto* tr = app.add_subcommand("train", "run the staged curriculum");
    std::string tr_config, tr_data, tr_out, tr_variant;
    int tr_stages = 0, tr_epochs = 0, tr_batch = 0, tr_k = 0;
    double tr_lr = 0.0;
    uint64_t tr_seed = 0;
    tr->add_option("--config", tr_config, "JSON config path (defaults apply if omitted)");
    tr->add_option("--data", tr_data, "dataset directory with train.jsonl")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--seed", tr_seed, "master seed (overrides config)");
    tr->add_option("--variant", tr_variant, "training variant (overrides config)");
    tr->add_option("--n-stages", tr_stages, "curriculum stages (overrides config)");
    tr->add_option("--epochs-per-stage", tr_epochs, "epochs per stage (overrides config)");
    tr->add_option("--batch-size", tr_batch, "batch size (overrides config)");
    tr->add_option("--lr", tr_lr, "learning rate (overrides config)");
    tr->add_option("--k", tr_k, "latent vision width (overrides config)");
    tr->callback([&] {
        Config cfg = load_config_or_defaults(tr_config);
        if (tr->count("--seed")) cfg.seed = tr_seed;
        if (tr->count("--variant")) cfg.train.variant = variant_from_str(tr_variant);
        if (tr->count("--n-stages")) cfg.train.n_stages = tr_stages;
        if (tr->count("--epochs-per-stage")) cfg.train.epochs_per_stage = tr_epochs;
        if (tr->count("--batch-size")) cfg.train.batch_size = tr_batch;
        if (tr->count("--lr")) cfg.train.lr = tr_lr;
        if (tr->count("--k")) cfg.latent.k = tr_k;
        const auto art = run_train(cfg, tr_data, tr_out, echo_epoch);
        std::cout << "wrote " << art.checkpoint_paths.size() << " checkpoints, "
                  << art.log_path << ", " << art.config_path << "\n";
    });

    /* eval ----------------------------------------------------------------------- */
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset file");
    EvalRequest ev_req;
    ev->add_option("--ckpt", ev_req.ckpt_path, "checkpoint file")->required();
    ev->add_option("--data", ev_req.data_path, "dataset JSONL file")->required();
    ev->add_option("--n-latent", ev_req.n_latent, "latent steps at inference")->required();
    ev->add_option("--report", ev_req.report_path, "metrics CSV path")->required();
    ev->add_option("--dump-per-sample", ev_req.per_sample_path, "per-sample CSV path");
    ev->add_option("--k", ev_req.latent.k, "latent vision width")->capture_default_str();
    ev->add_option("--exclude-previous", ev_req.latent.exclude_previous,
                   "exclude previously selected patches")
        ->capture_default_str();
    ev->add_option("--max-new", ev_req.max_new, "decode budget")->capture_default_str();
    ev->callback([&] {
        const RunMetrics m = run_eval(ev_req);
        std::cout << "accuracy " << fmt6(m.accuracy) << ", ar_steps " << fmt6(m.ar_steps_mean)
                  << ", latency " << fmt6(m.latency_ms_mean) << " ms over " << m.n_samples
                  << " samples -> " << ev_req.report_path << "\n";
    });

    /* analyze ------------------------------------------------------------------------ */
    auto* an = app.add_subcommand("analyze", "attention, ablation, and sweep reports");
    std::string an_mode, an_ckpt, an_ckpt_dir, an_config, an_data, an_out, an_report;
    int an_n_latent = 3;
    LatentOptions an_latent;
    std::vector<int> an_k_values{1, 2, 4};
    an->add_option("--mode", an_mode, "attention | ablation | sweep-k | sweep-stage")
        ->required();
    an->add_option("--ckpt", an_ckpt, "checkpoint (attention mode)");
    an->add_option("--ckpt-dir", an_ckpt_dir, "stage checkpoint directory (sweep-stage)");
    an->add_option("--config", an_config, "JSON config (ablation / sweep-k)");
    an->add_option("--data", an_data,
                   "dataset file (attention / sweep-stage) or directory (ablation / sweep-k)");
    an->add_option("--out", an_out, "checkpoint output directory (ablation / sweep-k)");
    an->add_option("--report", an_report, "CSV path")->required();
    an->add_option("--n-latent", an_n_latent, "latent steps (attention mode)")
        ->capture_default_str();
    an->add_option("--k", an_latent.k, "latent vision width")->capture_default_str();
    an->add_option("--exclude-previous", an_latent.exclude_previous,
                   "exclude previously selected patches")
        ->capture_default_str();
    an->add_option("--k-values", an_k_values, "k values for sweep-k")->delimiter(',');
    an->callback([&] {
        auto need = [&](const std::string& v, const char* flag) {
            if (v.empty())
                throw ConfigError("analyze --mode " + an_mode + " requires " + flag);
        };
        if (an_mode == "attention") {
            need(an_ckpt, "--ckpt");
            need(an_data, "--data");
            const size_t rows =
                run_analyze_attention(an_ckpt, an_data, an_n_latent, an_latent, an_report);
            std::cout << rows << " attention rows -> " << an_report << "\n";
        } else if (an_mode == "ablation") {
            need(an_data, "--data");
            need(an_out, "--out");
            run_analyze_ablation(load_config_or_defaults(an_config), an_data, an_out,
                                 an_report, echo_epoch);
            std::cout << "ablation report -> " << an_report << "\n";
        } else if (an_mode == "sweep-k") {
            need(an_data, "--data");
            need(an_out, "--out");
            run_analyze_sweep_k(load_config_or_defaults(an_config), an_data, an_out,
                                an_k_values, an_report, echo_epoch);
            std::cout << "sweep-k report -> " << an_report << "\n";
        } else if (an_mode == "sweep-stage") {
            need(an_ckpt_dir, "--ckpt-dir");
            need(an_data, "--data");
            run_analyze_sweep_stage(an_ckpt_dir, an_data, an_latent, an_report);
            std::cout << "sweep-stage report -> " << an_report << "\n";
        } else {
            throw ConfigError("unknown analyze mode: " + an_mode);
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors map to 1; --help stays 0
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
