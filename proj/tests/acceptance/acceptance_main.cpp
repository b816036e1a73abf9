// Acceptance gate: ten pinned criteria, one PASS/FAIL line each. Exits
// nonzero if any criterion fails. The expensive shared artifacts (three
// trained seeds plus the no-rationale baseline) are built once and reused by
// the efficiency, learning, stage-trend, and attention criteria.

#include <chrono>
#include <cstdio>

#include "mlr/pipeline.hpp"

using namespace mlr;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

int g_failures = 0;

void report(int id, bool pass, const std::string& detail, double secs) {
    std::printf("criterion %2d: %s  %s  (%.1f s)\n", id, pass ? "PASS" : "FAIL",
                detail.c_str(), secs);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

template <typename Fn>
void run_criterion(int id, Fn&& fn) {
    Timer t;
    std::string detail;
    bool pass = false;
    try {
        pass = fn(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    report(id, pass, detail, t.seconds());
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", v * 100.0);
    return buf;
}

/* ---- criterion 1: gradient fidelity ------------------------------------------ */
//
// Micro model (2 layers, 2 heads, d_model 16, 4 image patches, k = 2) run for
// 3 chained latent steps into a supervised tail. The analytic gradient of the
// full loss is checked against central finite differences at every parameter
// coordinate. The per-step patch selections are frozen at their base-point
// values: top-k choice is piecewise constant, so the gradient is defined on
// the smooth piece the base point lies in.
bool criterion1(std::string& detail) {
    ModelConfig mc;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.d_model = 16;
    mc.d_ff = 32;
    mc.vocab_size = 64;
    mc.n_patches = 4;
    mc.max_seq_len = 96;
    auto params = init_params<double>(mc, 17);

    const std::vector<int> question = {token_id("go"), tok::kUp, token_id("sum"),
                                       token_id("digits"), token_id("?")};
    const std::vector<int> patch_digits = {3, 8, 1, 5};
    const std::vector<int> patch_markers = {1, 2, 0, 4};
    const std::vector<int> tail = {tok::kStep, tok::kLetterA + 1, tok::kDigit0 + 7,
                                   tok::kEos};
    const int n_latent = 3, k = 2;

    std::vector<std::vector<int>> frozen_sel;

    auto loss_eval = [&](Params<double>& p, bool want_grad,
                         std::vector<std::vector<double>>* grads_out) -> double {
        Graph<double> g;
        auto bp = bind_params(g, p, want_grad);
        std::vector<int> pd(4), pm(4), pc(4);
        for (int j = 0; j < 4; ++j) {
            pd[(size_t)j] = tok::kDigit0 + patch_digits[(size_t)j];
            pm[(size_t)j] = marker_token((Marker)patch_markers[(size_t)j]);
            pc[(size_t)j] = tok::kCell0 + j;
        }
        auto z = g.add(g.add(g.embed_lookup(bp.tok_embed, pd), g.embed_lookup(bp.tok_embed, pm)),
                       g.embed_lookup(bp.tok_embed, pc));
        Rows<double> rows;
        rows.push_back(RowSpec<double>::tok(tok::kBos, Tag::text, 0));
        for (int id : question)
            rows.push_back(RowSpec<double>::tok(id, Tag::text, (int)rows.size()));
        const int img_begin = (int)rows.size();
        for (int j = 0; j < 4; ++j)
            rows.push_back(RowSpec<double>::patch_row(j, (int)rows.size()));
        const int img_end = (int)rows.size();
        std::vector<int> pending;
        for (int i = 0; i < n_latent; ++i) {
            pending.push_back((int)rows.size());
            rows.push_back(RowSpec<double>::tok(tok::kLatent, Tag::placeholder));
        }

        const bool recording = frozen_sel.size() < (size_t)n_latent;
        for (int i = 0; i < n_latent; ++i) {
            const int p_i = pending.front();
            auto fr = forward(g, bp, build_input(g, bp, rows, p_i, z));
            std::vector<int> sel;
            if (recording) {
                sel = select_latent_vision(fr, p_i - 1, img_begin, img_end, k);
                frozen_sel.push_back(sel);
            } else {
                sel = frozen_sel[(size_t)i];
            }
            Rows<double> block;
            block.push_back(RowSpec<double>::tensor_row(g.slice_rows(fr.hidden, p_i - 1, p_i),
                                                        Tag::latent_text));
            for (int j : sel) {
                auto r = RowSpec<double>::patch_row(j);
                r.tag = Tag::latent_vision;
                block.push_back(r);
            }
            const int w = (int)block.size();
            rows.insert(rows.begin() + p_i, block.begin(), block.end());
            for (int t = p_i; t < p_i + w; ++t) rows[(size_t)t].pos_id = t;
            rows[(size_t)(p_i + w)].pos_id = p_i + w;
            pending.erase(pending.begin());
            for (int& q : pending) q += w;
        }

        std::vector<int> loss_rows, loss_targets;
        for (int id : tail) {
            loss_rows.push_back((int)rows.size() - 1);
            loss_targets.push_back(id);
            rows.push_back(RowSpec<double>::tok(id, Tag::answer, (int)rows.size()));
        }
        auto fr = forward(g, bp, build_input(g, bp, rows, (int)rows.size(), z));
        auto loss = g.scale(g.masked_nll(fr.logits, loss_rows, loss_targets),
                            1.0 / (double)loss_rows.size());
        if (want_grad) {
            g.backward(loss);
            grads_out->clear();
            for (const auto& h : bp.handles)
                grads_out->emplace_back(h.grad().begin(), h.grad().end());
        }
        return loss.values()[0];
    };

    std::vector<std::vector<double>> analytic;
    loss_eval(params, true, &analytic);  // records the frozen selections too

    const double h = 1e-5;
    double max_rel = 0.0;
    size_t checked = 0;
    for (size_t t = 0; t < params.count(); ++t) {
        auto& vals = params.tensors[t].values;
        for (size_t c = 0; c < vals.size(); ++c) {
            const double keep = vals[c];
            vals[c] = keep + h;
            const double up = loss_eval(params, false, nullptr);
            vals[c] = keep - h;
            const double dn = loss_eval(params, false, nullptr);
            vals[c] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double an = analytic[t][c];
            const double rel =
                std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
            max_rel = std::max(max_rel, rel);
            ++checked;
        }
    }
    detail = "max relative error " + fmt6(max_rel) + " over " + std::to_string(checked) +
             " coordinates in " + std::to_string(params.count()) + " parameter groups";
    return max_rel < 1e-4;
}

/* ---- criterion 2: selection oracle ------------------------------------------- */
//
// select_latent_vision against an independent brute-force summation over
// every layer and head plus a stable sort, on 1,000 random attention stacks
// with manufactured exact ties and random exclusions.
bool criterion2(std::string& detail) {
    Rng rng(derive_seed(2024, "selection-oracle"));
    int mismatches = 0, tied_trials = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int L = 1 + (int)rng.uniform_int(3);
        const int H = 1 + (int)rng.uniform_int(3);
        const int J = 4 + (int)rng.uniform_int(13);
        const int img_begin = 1 + (int)rng.uniform_int(6);
        const int T = img_begin + J + 1 + (int)rng.uniform_int(4);
        const int query = T - 1;

        std::vector<std::vector<std::vector<float>>> vals(
            (size_t)L, std::vector<std::vector<float>>((size_t)H));
        for (int l = 0; l < L; ++l)
            for (int hh = 0; hh < H; ++hh) {
                auto& v = vals[(size_t)l][(size_t)hh];
                v.resize((size_t)T * (size_t)T);
                for (auto& x : v) x = (float)rng.uniform();
            }
        // manufacture exact ties: copy patch a's attention onto patch b in
        // every layer/head at the query row
        const int n_ties = (int)rng.uniform_int(3);
        if (n_ties > 0) ++tied_trials;
        for (int i = 0; i < n_ties; ++i) {
            const int a = (int)rng.uniform_int((uint64_t)J);
            const int b = (int)rng.uniform_int((uint64_t)J);
            if (a == b) continue;
            for (int l = 0; l < L; ++l)
                for (int hh = 0; hh < H; ++hh)
                    vals[(size_t)l][(size_t)hh][(size_t)query * (size_t)T +
                                                (size_t)(img_begin + b)] =
                        vals[(size_t)l][(size_t)hh][(size_t)query * (size_t)T +
                                                    (size_t)(img_begin + a)];
        }
        std::vector<int> excluded;
        const int n_excl = (int)rng.uniform_int((uint64_t)(J / 2 + 1));
        {
            std::vector<int> pool(J);
            for (int j = 0; j < J; ++j) pool[(size_t)j] = j;
            rng.shuffle(pool);
            excluded.assign(pool.begin(), pool.begin() + n_excl);
        }
        const int k = 1 + (int)rng.uniform_int((uint64_t)(J + 2));

        Graph<float> g;
        ForwardResult<float> fr;
        fr.T = T;
        fr.attn.resize((size_t)L);
        for (int l = 0; l < L; ++l)
            for (int hh = 0; hh < H; ++hh)
                fr.attn[(size_t)l].push_back(
                    g.constant({T, T}, vals[(size_t)l][(size_t)hh]));
        const auto got = select_latent_vision(fr, query, img_begin, img_begin + J, k, excluded);

        // oracle: per-patch brute-force sum in layer-then-head order, stable
        // sort on descending score with ascending-index tie order
        std::vector<double> score((size_t)J, 0.0);
        for (int j = 0; j < J; ++j)
            for (int l = 0; l < L; ++l)
                for (int hh = 0; hh < H; ++hh)
                    score[(size_t)j] += (double)vals[(size_t)l][(size_t)hh]
                                                    [(size_t)query * (size_t)T +
                                                     (size_t)(img_begin + j)];
        std::vector<int> cand;
        for (int j = 0; j < J; ++j)
            if (std::find(excluded.begin(), excluded.end(), j) == excluded.end())
                cand.push_back(j);
        std::stable_sort(cand.begin(), cand.end(),
                         [&](int a, int b) { return score[(size_t)a] > score[(size_t)b]; });
        cand.resize(std::min(cand.size(), (size_t)k));
        if (got != cand) ++mismatches;
    }
    detail = std::to_string(mismatches) + " mismatches in 1000 stacks (" +
             std::to_string(tied_trials) + " with manufactured ties)";
    return mismatches == 0;
}

/* ---- criterion 3: insertion arithmetic --------------------------------------- */
//
// Length, position-shift, and autoregressive-step laws for every
// (n, k) in {0..3} x {1, 4, 8}, on 100 random full-length samples each.
bool criterion3(std::string& detail) {
    GenSpec gs;
    gs.n = 130;
    gs.seed = 303;
    gs.short_fraction = 0.0;  // every sample carries 3 rationale steps
    const auto data = generate_dataset(gs);
    std::vector<Sample> samples(data.train.begin(), data.train.begin() + 100);

    ModelConfig mc;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.d_model = 16;
    mc.d_ff = 32;
    mc.max_seq_len = 160;
    const auto params = init_params<float>(mc, 23);

    long checks = 0;
    for (int n : {0, 1, 2, 3}) {
        for (int k : {1, 4, 8}) {
            LatentOptions lo;
            lo.k = k;
            lo.exclude_previous = false;  // keep every block at full width k+1
            lo.capture = true;
            const int w = k + 1;
            for (const Sample& s : samples) {
                const InferResult r = infer(params, s, n, lo, 4);
                const int base = 1 + (int)s.question.size() + kGridCells;  // pre-placeholder
                if (r.n_latent_eff != n) return false;
                // length law: base rows + n placeholders + n blocks of width k+1
                if (r.final_len != base + n + n * w) {
                    detail = "length law violated at n=" + std::to_string(n) +
                             " k=" + std::to_string(k);
                    return false;
                }
                // shift law: placeholder i started at base+i and moved k+1
                // rows right per earlier insertion
                for (int i = 0; i < n; ++i) {
                    const int expect_p = base + i + i * w;
                    if (r.captures[(size_t)i].query_row != expect_p - 1) {
                        detail = "shift law violated at step " + std::to_string(i);
                        return false;
                    }
                }
                // AR-step law: latent steps plus emitted tokens, one forward each
                if (r.ar_steps != r.n_latent_eff + (int)r.emitted.size() ||
                    r.forward_passes != r.ar_steps) {
                    detail = "AR-step law violated";
                    return false;
                }
                checks += 3;
            }
        }
    }
    detail = "length, shift, and AR laws exact on 100 samples x 12 (n,k) settings";
    return true;
}

/* ---- criterion 4: loss masking ------------------------------------------------ */
//
// Adding arbitrary perturbations to logits at non-supervised rows leaves the
// stage loss bitwise unchanged, for stages 0 through 3.
bool criterion4(std::string& detail) {
    GenSpec gs;
    gs.n = 40;
    gs.seed = 77;
    const auto data = generate_dataset(gs);

    ModelConfig mc;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.d_model = 32;
    mc.d_ff = 64;
    mc.max_seq_len = 160;
    const auto params = init_params<float>(mc, 29);
    TrainConfig tc;  // defaults: k = 4, exclusion on

    Rng rng(derive_seed(404, "mask-perturb"));
    int cases = 0;
    for (int stage = 0; stage <= 3; ++stage) {
        for (int si = 0; si < 4; ++si) {
            const Sample& s = data.train[(size_t)si];
            Graph<float> g;
            auto bp = bind_params(g, params, false);
            auto z = render_image(g, bp, s.grid);
            auto ex = build_stage_example(g, bp, s, stage, tc, z);
            auto fr = forward(g, bp, build_input(g, bp, ex.rows, (int)ex.rows.size(), z));
            const float base =
                g.masked_nll(fr.logits, ex.loss_rows, ex.loss_targets).values()[0];

            // random noise everywhere except the supervised rows
            std::vector<float> pert((size_t)fr.T * (size_t)mc.vocab_size);
            for (auto& x : pert) x = (float)(rng.uniform() * 20.0 - 10.0);
            for (int row : ex.loss_rows)
                for (int v = 0; v < mc.vocab_size; ++v)
                    pert[(size_t)row * (size_t)mc.vocab_size + (size_t)v] = 0.0f;
            auto logits2 = g.add(fr.logits, g.constant({fr.T, mc.vocab_size}, pert));
            const float perturbed =
                g.masked_nll(logits2, ex.loss_rows, ex.loss_targets).values()[0];
            if (perturbed != base) {
                detail = "stage " + std::to_string(stage) + " loss moved by " +
                         fmt6((double)perturbed - (double)base);
                return false;
            }
            ++cases;
        }
    }
    detail = "loss bitwise unchanged under masked-row perturbations in " +
             std::to_string(cases) + " cases (stages 0-3)";
    return true;
}

/* ---- shared artifacts for criteria 5-8 --------------------------------------- */

struct SeedArtifacts {
    std::vector<Params<float>> stage_params;  // after stages 0..3
    Params<float> no_cot_params;
    RunMetrics eval_stage[4];  // stage n evaluated at n_latent = n
    RunMetrics eval_no_cot;
};

struct Artifacts {
    Dataset data;
    std::vector<SeedArtifacts> seeds;
    double train_seconds = 0.0;
    double eval_seconds = 0.0;
    bool ready = false;
    std::string error;
};

Artifacts build_artifacts() {
    Artifacts art;
    Timer total;
    try {
        GenSpec gs;  // defaults: 2500 samples, seed 7 -> 2000 train / 500 test
        art.data = generate_dataset(gs);

        const ModelConfig mc;  // library defaults
        for (uint64_t seed : {1ull, 2ull, 3ull}) {
            SeedArtifacts sa;
            TrainConfig tc;  // defaults: 4 stages, lr 4e-5, beta1 0.9, batch 4, k 4
            tc.seed = seed;

            auto params = init_params<float>(mc, seed);
            const std::function<void(int, const Params<float>&)> keep =
                [&](int stage, const Params<float>& p) {
                    sa.stage_params.push_back(p);
                    std::printf("  [train] seed %llu stage %d done\n",
                                (unsigned long long)seed, stage);
                    std::fflush(stdout);
                };
            train_curriculum(params, art.data.train, tc, {}, keep);

            TrainConfig tc_nc = tc;
            tc_nc.variant = Variant::no_cot;
            sa.no_cot_params = init_params<float>(mc, seed);
            train_curriculum(sa.no_cot_params, art.data.train, tc_nc);
            std::printf("  [train] seed %llu no_cot done\n", (unsigned long long)seed);
            std::fflush(stdout);
            art.seeds.push_back(std::move(sa));
        }
        art.train_seconds = total.seconds();

        Timer evals;
        for (auto& sa : art.seeds) {
            for (int n = 0; n <= 3; ++n) {
                EvalOptions eo;
                eo.n_latent = n;
                eo.latent.k = 4;
                eo.latent.capture = false;
                eo.max_new = n == 0 ? 48 : 16;  // explicit decoding emits the rationale
                const auto evals_n =
                    evaluate_samples(sa.stage_params[(size_t)n], art.data.test, eo);
                sa.eval_stage[n] = reduce_metrics(evals_n, n);
            }
            EvalOptions eo;
            eo.n_latent = 0;
            eo.max_new = 16;
            sa.eval_no_cot = reduce_metrics(evaluate_samples(sa.no_cot_params, art.data.test, eo), 0);
        }
        art.eval_seconds = evals.seconds();
        art.ready = true;
    } catch (const std::exception& e) {
        art.error = e.what();
    }
    return art;
}

double seed_mean(const Artifacts& art, const std::function<double(const SeedArtifacts&)>& f) {
    double s = 0.0;
    for (const auto& sa : art.seeds) s += f(sa);
    return s / (double)art.seeds.size();
}

/* ---- criteria 5-8 -------------------------------------------------------------- */

bool criterion5(const Artifacts& art, std::string& detail) {
    if (!art.ready) {
        detail = "artifacts unavailable: " + art.error;
        return false;
    }
    const double latent =
        seed_mean(art, [](const SeedArtifacts& s) { return s.eval_stage[3].ar_steps_mean; });
    const double explicit_cot =
        seed_mean(art, [](const SeedArtifacts& s) { return s.eval_stage[0].ar_steps_mean; });
    const double ratio = latent / explicit_cot;
    detail = "AR steps: latent " + fmt6(latent) + " vs explicit " + fmt6(explicit_cot) +
             " (ratio " + fmt6(ratio) + ", need <= 0.25)";
    return ratio <= 0.25;
}

bool criterion6(const Artifacts& art, double setup_seconds, std::string& detail) {
    if (!art.ready) {
        detail = "artifacts unavailable: " + art.error;
        return false;
    }
    const double acc =
        seed_mean(art, [](const SeedArtifacts& s) { return s.eval_stage[3].accuracy; });
    const double baseline =
        seed_mean(art, [](const SeedArtifacts& s) { return s.eval_no_cot.accuracy; });
    const bool in_budget = setup_seconds <= 7200.0;
    detail = "stage-3 accuracy " + pct(acc) + " (need >= 85.0%), no-rationale baseline " +
             pct(baseline) + " (margin " + pct(acc - baseline) + ", need >= 10.0%), " +
             "train+eval wallclock " + std::to_string((long)setup_seconds) + " s";
    return acc >= 0.85 && acc - baseline >= 0.10 && in_budget;
}

bool criterion7(const Artifacts& art, std::string& detail) {
    if (!art.ready) {
        detail = "artifacts unavailable: " + art.error;
        return false;
    }
    double acc[4];
    for (int n = 1; n <= 3; ++n)
        acc[n] = seed_mean(
            art, [n](const SeedArtifacts& s) { return s.eval_stage[n].accuracy; });
    detail = "mean accuracy by latent depth: 1 -> " + pct(acc[1]) + ", 2 -> " + pct(acc[2]) +
             ", 3 -> " + pct(acc[3]) + " (tolerance 1.0 point per transition)";
    return acc[2] >= acc[1] - 0.01 && acc[3] >= acc[2] - 0.01;
}

bool criterion8(const Artifacts& art, std::string& detail) {
    // analytic cases, pinned to 1e-9
    std::vector<double> uni(24, 0.0);
    std::vector<int> I, Tpos;
    for (int i = 0; i < 8; ++i) I.push_back(i);
    for (int i = 8; i < 24; ++i) Tpos.push_back(i);
    for (auto& v : uni) v = 0.125;
    if (std::abs(attention_ratio(uni, I, Tpos) - 0.5) > 1e-9) {
        detail = "uniform ratio case failed";
        return false;
    }
    std::vector<double> four(6, 0.0);
    for (int i = 0; i < 4; ++i) four[(size_t)i] = 0.25;
    if (std::abs(attention_focus(four, {0, 1, 2, 3}) - 1.0 / (std::log(4.0) + 1e-6)) > 1e-9) {
        detail = "uniform focus case failed";
        return false;
    }
    std::vector<double> hot(6, 0.0);
    hot[2] = 1.0;
    if (std::abs(attention_focus(hot, {0, 1, 2, 3, 4, 5}) - 1e6) > 1e-3) {  // 1e-9 relative
        detail = "one-hot focus case failed";
        return false;
    }

    if (!art.ready) {
        detail = "analytic cases pass; artifacts unavailable: " + art.error;
        return false;
    }

    // bounds on every emitted row of a captured run over the trained model
    const auto& sa = art.seeds.front();
    EvalOptions eo;
    eo.n_latent = 3;
    eo.latent.k = 4;
    eo.latent.capture = true;
    eo.max_new = 16;
    const auto evals = evaluate_samples(sa.stage_params[3], art.data.test, eo);
    double rsum[3] = {0, 0, 0}, fsum[3] = {0, 0, 0};
    int contributors = 0;
    for (const auto& e : evals) {
        if (e.n_latent_eff != 3) continue;
        const auto traj = attention_trajectory(e.captures);
        for (const auto& tp : traj) {
            const size_t m = e.captures[(size_t)(tp.step - 1)].text_positions.size() +
                             e.captures[(size_t)(tp.step - 1)].selected.size();
            if (tp.F < 1.0 / (std::log((double)m) + 1e-6) - 1e-9 || tp.F > 1e6 + 1e-3 ||
                tp.R < 0.0) {
                detail = "bound violated on sample " + e.id;
                return false;
            }
            rsum[tp.step - 1] += tp.R;
            fsum[tp.step - 1] += tp.F;
        }
        ++contributors;
    }
    if (contributors == 0) {
        detail = "no 3-step samples in the test split";
        return false;
    }
    std::string traj_report = "per-step means over " + std::to_string(contributors) +
                              " samples: R [";
    for (int i = 0; i < 3; ++i)
        traj_report += fmt6(rsum[i] / contributors) + (i < 2 ? ", " : "], F [");
    for (int i = 0; i < 3; ++i)
        traj_report += fmt6(fsum[i] / contributors) + (i < 2 ? ", " : "]");
    const bool r_down = rsum[0] >= rsum[1] && rsum[1] >= rsum[2];
    const bool f_up = fsum[0] <= fsum[1] && fsum[1] <= fsum[2];
    traj_report += std::string("; trend R ") + (r_down ? "decreasing" : "mixed") + ", F " +
                   (f_up ? "increasing" : "mixed") + " (reported, not asserted)";
    detail = "analytic cases to 1e-9 and bounds hold on every row; " + traj_report;
    return true;
}

/* ---- criterion 9: determinism --------------------------------------------------- */

bool criterion9(std::string& detail) {
    const fs::path root = fs::temp_directory_path() / "mlr_accept_det";
    fs::remove_all(root);

    Config cfg;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 2;
    cfg.model.d_model = 32;
    cfg.model.d_ff = 64;
    cfg.train.epochs_per_stage = 1;
    cfg.latent.k = 2;
    cfg.latent.n_latent_eval = 3;
    cfg.task.n = 60;
    cfg.task.seed = 13;
    cfg.seed = 21;

    uint64_t ckpt_hash[2], csv_hash[2], log_hash[2];
    for (int run = 0; run < 2; ++run) {
        const std::string dir = (root / ("run" + std::to_string(run))).string();
        run_gen_data(cfg.task, dir + "/data");
        run_train(cfg, dir + "/data", dir + "/out");
        EvalRequest req;
        req.ckpt_path = dir + "/out/stage3.ckpt";
        req.data_path = dir + "/data/test.jsonl";
        req.report_path = dir + "/eval.csv";
        req.n_latent = 3;
        req.latent.k = 2;
        run_eval(req);

        uint64_t h = fnv1a64(std::string_view("ckpts"));
        for (int st = 0; st < 4; ++st) {
            const auto bytes =
                read_file_bytes(dir + "/out/stage" + std::to_string(st) + ".ckpt");
            h = fnv1a64(bytes.data(), bytes.size(), h);
        }
        ckpt_hash[run] = h;
        csv_hash[run] =
            csv_hash_excluding(read_file_bytes(dir + "/eval.csv"), {"latency_ms_mean"});
        log_hash[run] = jsonl_hash_excluding(read_file_bytes(dir + "/out/train_log.jsonl"),
                                             {"wallclock_ms"});
    }
    fs::remove_all(root);
    const bool pass = ckpt_hash[0] == ckpt_hash[1] && csv_hash[0] == csv_hash[1] &&
                      log_hash[0] == log_hash[1];
    detail = std::string("checkpoint/report/log hashes ") +
             (pass ? "identical across two full pipeline runs" : "DIFFER between runs");
    return pass;
}

/* ---- criterion 10: format round-trips -------------------------------------------- */

bool criterion10(std::string& detail) {
    // checkpoint: save -> load -> save, byte-identical
    ModelConfig mc;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.d_model = 32;
    mc.d_ff = 64;
    const auto params = init_params<float>(mc, 41);
    const auto bytes1 = checkpoint_bytes(params, 2);
    const Checkpoint ck = checkpoint_from_bytes(bytes1);
    const auto bytes2 = checkpoint_bytes(ck.params, ck.stage);
    if (bytes1 != bytes2) {
        detail = "checkpoint bytes changed across save/load/save";
        return false;
    }
    // and through the filesystem
    const fs::path root = fs::temp_directory_path() / "mlr_accept_fmt";
    fs::create_directories(root);
    const std::string p1 = (root / "a.ckpt").string(), p2 = (root / "b.ckpt").string();
    save_checkpoint(p1, params, 2);
    const Checkpoint ck2 = load_checkpoint(p1);
    save_checkpoint(p2, ck2.params, ck2.stage);
    if (read_file_bytes(p1) != read_file_bytes(p2)) {
        detail = "checkpoint file round-trip not byte-identical";
        return false;
    }

    // dataset: regeneration under a fixed seed hashes identically
    GenSpec gs;
    gs.n = 80;
    gs.seed = 5;
    const auto r1 = run_gen_data(gs, (root / "d1").string());
    const auto r2 = run_gen_data(gs, (root / "d2").string());
    const bool same_files =
        read_file_bytes((root / "d1/train.jsonl").string()) ==
            read_file_bytes((root / "d2/train.jsonl").string()) &&
        read_file_bytes((root / "d1/test.jsonl").string()) ==
            read_file_bytes((root / "d2/test.jsonl").string());
    fs::remove_all(root);
    if (r1.content_hash != r2.content_hash || !same_files) {
        detail = "dataset regeneration hash mismatch";
        return false;
    }
    detail = "checkpoint save/load/save byte-identical; dataset regeneration hash " +
             r1.content_hash + " reproduced";
    return true;
}

}  // namespace

int main() {
    Timer total;
    run_criterion(1, criterion1);
    run_criterion(2, criterion2);
    run_criterion(3, criterion3);
    run_criterion(4, criterion4);

    std::printf("-- building shared artifacts: 3 seeds x (full curriculum + no-rationale "
                "baseline) on 2000 train / 500 test --\n");
    std::fflush(stdout);
    const Artifacts art = build_artifacts();
    std::printf("-- artifacts: training %.0f s, evaluation %.0f s --\n", art.train_seconds,
                art.eval_seconds);
    std::fflush(stdout);

    run_criterion(5, [&](std::string& d) { return criterion5(art, d); });
    run_criterion(6, [&](std::string& d) {
        return criterion6(art, art.train_seconds + art.eval_seconds, d);
    });
    run_criterion(7, [&](std::string& d) { return criterion7(art, d); });
    run_criterion(8, [&](std::string& d) { return criterion8(art, d); });
    run_criterion(9, criterion9);
    run_criterion(10, criterion10);

    std::printf("acceptance: %d/10 passed in %.0f s\n", 10 - g_failures, total.seconds());
    return g_failures == 0 ? 0 : 1;
}
