#pragma once

// Evaluation and attention diagnostics: exact-match accuracy, autoregressive
// step and latency accounting, the visual/text attention ratio R, and the
// inverse-entropy attention focus F.

#include <chrono>

#include "mlr/latent.hpp"

namespace mlr {

inline constexpr double kFocusEps = 1e-6;

// Exact match after stripping end/padding markers from both sides.
inline double exact_match_accuracy(const std::vector<std::vector<int>>& predictions,
                                   const std::vector<std::vector<int>>& references) {
    if (predictions.size() != references.size())
        throw ContractError("accuracy: prediction/reference count mismatch");
    if (predictions.empty()) throw ContractError("accuracy over zero samples");
    auto strip = [](const std::vector<int>& v) {
        std::vector<int> out;
        for (int id : v)
            if (id != tok::kEos && id != tok::kPad) out.push_back(id);
        return out;
    };
    int hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (strip(predictions[i]) == strip(references[i])) ++hits;
    return (double)hits / (double)predictions.size();
}

// R: attention mass on the selected image positions over attention mass on
// the text positions (question text plus earlier latent-text rows).
inline double attention_ratio(const std::vector<double>& summed_row,
                              const std::vector<int>& image_positions,
                              const std::vector<int>& text_positions) {
    if (text_positions.empty()) throw ContractError("attention_ratio: empty text set");
    auto mass = [&](const std::vector<int>& ps) {
        double m = 0.0;
        for (int p : ps) {
            if (p < 0 || p >= (int)summed_row.size())
                throw ContractError("attention position out of range");
            m += summed_row[(size_t)p];
        }
        return m;
    };
    const double text_mass = mass(text_positions);
    if (text_mass == 0.0)
        throw NumericError("attention_ratio: zero attention mass on text positions");
    return mass(image_positions) / text_mass;
}

// F = 1 / (H + eps) with H the natural-log entropy of the attention weights
// over `positions`, normalized to a distribution. One-hot gives 1/eps; the
// uniform m-way distribution gives 1/(ln m + eps).
inline double attention_focus(const std::vector<double>& summed_row,
                              const std::vector<int>& positions) {
    if (positions.empty()) throw ContractError("attention_focus: empty position set");
    double mass = 0.0;
    for (int p : positions) {
        if (p < 0 || p >= (int)summed_row.size())
            throw ContractError("attention position out of range");
        if (summed_row[(size_t)p] < 0.0)
            throw ContractError("attention_focus: negative attention weight");
        mass += summed_row[(size_t)p];
    }
    if (mass == 0.0) throw ContractError("attention_focus: all-zero attention mass");
    double h = 0.0;
    for (int p : positions) {
        const double pk = summed_row[(size_t)p] / mass;
        if (pk > 0.0) h -= pk * std::log(pk);
    }
    return 1.0 / (h + kFocusEps);
}

struct TrajectoryPoint {
    int step = 0;  // 1-based latent step
    double R = 0.0;
    double F = 0.0;
};

// Per-step R and F from a captured run. I is the step's selected image
// positions; T is the question text plus earlier latent-text rows; F is
// taken over I together with T.
inline std::vector<TrajectoryPoint> attention_trajectory(
    const std::vector<StepCapture>& captures) {
    std::vector<TrajectoryPoint> out;
    for (const auto& cap : captures) {
        if (cap.image_positions.empty())
            throw ContractError("capture lacks image positions");
        const int img_begin = cap.image_positions.front();
        std::vector<int> selected_positions;
        for (int j : cap.selected) selected_positions.push_back(img_begin + j);
        std::vector<int> focus_positions = selected_positions;
        focus_positions.insert(focus_positions.end(), cap.text_positions.begin(),
                               cap.text_positions.end());
        TrajectoryPoint tp;
        tp.step = cap.step;
        tp.R = attention_ratio(cap.row, selected_positions, cap.text_positions);
        tp.F = attention_focus(cap.row, focus_positions);
        out.push_back(tp);
    }
    return out;
}

// Spearman rank correlation with average ranks on ties.
inline double spearman_rank(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ContractError("spearman: length mismatch");
    if (x.size() < 2) throw ContractError("spearman needs at least two observations");
    auto ranks = [](const std::vector<double>& v) {
        const int n = (int)v.size();
        std::vector<int> order((size_t)n);
        for (int i = 0; i < n; ++i) order[(size_t)i] = i;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (v[(size_t)a] != v[(size_t)b]) return v[(size_t)a] < v[(size_t)b];
            return a < b;
        });
        std::vector<double> r((size_t)n);
        int i = 0;
        while (i < n) {
            int j = i;
            while (j + 1 < n && v[(size_t)order[(size_t)j + 1]] == v[(size_t)order[(size_t)i]])
                ++j;
            const double avg = 0.5 * (double)(i + j) + 1.0;  // 1-based average rank
            for (int t = i; t <= j; ++t) r[(size_t)order[(size_t)t]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= (double)rx.size();
    my /= (double)ry.size();
    double num = 0.0, dx = 0.0, dy = 0.0;
    for (size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0.0 || dy == 0.0)
        throw NumericError("spearman: a variable is constant over the observations");
    return num / std::sqrt(dx * dy);
}

/* ---- evaluation ----------------------------------------------------------- */

struct EvalOptions {
    int n_latent = 3;
    LatentOptions latent;  // k, exclusion, ablation switches; capture set here
    int max_new = 64;
};

struct SampleEval {
    std::string id;
    bool correct = false;
    int ar_steps = 0;
    int n_latent_eff = 0;
    double latency_ms = 0.0;
    std::vector<int> predicted;
    std::vector<StepCapture> captures;
};

struct RunMetrics {
    double accuracy = 0.0;
    double ar_steps_mean = 0.0;
    double latency_ms_mean = 0.0;
    std::vector<double> per_step_ratio;  // length = n_latent evaluated
    std::vector<double> per_step_focus;
    int n_samples = 0;
};

// Latency spans exactly the inference call: dataset loading, graph teardown
// between samples, and metric reduction are all outside the clock.
template <typename Real>
std::vector<SampleEval> evaluate_samples(const Params<Real>& params,
                                         const std::vector<Sample>& samples,
                                         const EvalOptions& opts) {
    if (samples.empty()) throw DataError("evaluation split is empty");
    std::vector<SampleEval> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) {
        const auto t0 = std::chrono::steady_clock::now();
        InferResult r = infer(params, s, opts.n_latent, opts.latent, opts.max_new);
        const auto t1 = std::chrono::steady_clock::now();
        SampleEval e;
        e.id = s.id;
        e.predicted = r.answer;
        e.correct = exact_match_accuracy({r.answer}, {s.answer}) == 1.0;
        e.ar_steps = r.ar_steps;
        e.n_latent_eff = r.n_latent_eff;
        e.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        e.captures = std::move(r.captures);
        out.push_back(std::move(e));
    }
    return out;
}

// Aggregate per-sample results. Per-step attention columns are averaged over
// the samples that actually ran all n_latent steps, so every contributing
// trajectory has the same shape.
inline RunMetrics reduce_metrics(const std::vector<SampleEval>& evals, int n_latent) {
    if (evals.empty()) throw ContractError("reducing zero evaluations");
    RunMetrics m;
    m.n_samples = (int)evals.size();
    double ar = 0.0, lat = 0.0;
    int hits = 0;
    for (const auto& e : evals) {
        hits += e.correct ? 1 : 0;
        ar += (double)e.ar_steps;
        lat += e.latency_ms;
    }
    m.accuracy = (double)hits / (double)evals.size();
    m.ar_steps_mean = ar / (double)evals.size();
    m.latency_ms_mean = lat / (double)evals.size();

    if (n_latent > 0) {
        std::vector<double> rsum((size_t)n_latent, 0.0), fsum((size_t)n_latent, 0.0);
        int contributors = 0;
        for (const auto& e : evals) {
            if (e.n_latent_eff != n_latent || (int)e.captures.size() != n_latent) continue;
            const auto traj = attention_trajectory(e.captures);
            for (int i = 0; i < n_latent; ++i) {
                rsum[(size_t)i] += traj[(size_t)i].R;
                fsum[(size_t)i] += traj[(size_t)i].F;
            }
            ++contributors;
        }
        if (contributors > 0) {
            for (int i = 0; i < n_latent; ++i) {
                m.per_step_ratio.push_back(rsum[(size_t)i] / (double)contributors);
                m.per_step_focus.push_back(fsum[(size_t)i] / (double)contributors);
            }
        }
    }
    return m;
}

}  // namespace mlr
