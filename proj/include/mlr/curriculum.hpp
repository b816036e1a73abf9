#pragma once

// Progressive training schedule. Stage n replaces the first n rationale steps
// of each sample with latent steps; what remains of the rationale, the answer,
// and the end marker are supervised with next-token NLL. Gradients flow
// through the chained latent forwards back into every table.

#include <chrono>
#include <functional>

#include "mlr/latent.hpp"

namespace mlr {

enum class Variant {
    full,              // latent text + latent vision
    no_latent_text,    // vision-only blocks
    no_latent_vision,  // text-only blocks
    no_latent_part,    // static latent tokens, no feedback of any kind
    no_cot,            // question + image -> answer, no reasoning at all
    explicit_cot,      // fully spelled-out rationale at every stage
};

inline const char* variant_str(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_latent_text: return "no_latent_text";
        case Variant::no_latent_vision: return "no_latent_vision";
        case Variant::no_latent_part: return "no_latent_part";
        case Variant::no_cot: return "no_cot";
        case Variant::explicit_cot: return "explicit_cot";
    }
    return "?";
}

inline Variant variant_from_str(std::string_view s) {
    for (Variant v : {Variant::full, Variant::no_latent_text, Variant::no_latent_vision,
                      Variant::no_latent_part, Variant::no_cot, Variant::explicit_cot})
        if (s == variant_str(v)) return v;
    throw ConfigError("unknown variant: '" + std::string(s) + "'");
}

inline bool variant_uses_latent(Variant v) {
    return v == Variant::full || v == Variant::no_latent_text ||
           v == Variant::no_latent_vision || v == Variant::no_latent_part;
}

struct TrainConfig {
    int n_stages = 4;          // stage 0 is explicit; stage n uses n latent steps
    int epochs_per_stage = 3;
    int batch_size = 4;
    double lr = 4e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int k = 4;
    bool exclude_previous = true;
    uint64_t seed = 1;
    Variant variant = Variant::full;

    void validate(const ModelConfig& mc) const {
        if (n_stages < 1) throw ConfigError("n_stages must be at least 1");
        if (epochs_per_stage < 1) throw ConfigError("epochs_per_stage must be at least 1");
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
        if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
        if (k < 1) throw ConfigError("k must be at least 1");
        if (exclude_previous && (n_stages - 1) * k > mc.n_patches)
            throw ConfigError("exclusion would exhaust the " + std::to_string(mc.n_patches) +
                              " patches: (n_stages-1)*k = " +
                              std::to_string((n_stages - 1) * k));
    }

    LatentOptions latent_options(Variant v) const {
        LatentOptions o;
        o.k = k;
        o.exclude_previous = exclude_previous;
        o.use_latent_text = (v == Variant::full || v == Variant::no_latent_vision);
        o.use_latent_vision = (v == Variant::full || v == Variant::no_latent_text);
        o.placeholder_only = (v == Variant::no_latent_part);
        return o;
    }
};

/* ---- stage layout ------------------------------------------------------------ */

template <typename Real>
struct StageExample {
    Rows<Real> rows;
    std::vector<int> loss_rows;     // positions whose logits are supervised
    std::vector<int> loss_targets;  // token each of those positions must predict
    int n_latent_eff = 0;
};

// Assemble one training sequence for (sample, stage, variant) on the given
// graph. Latent variants run their latent phase here, so the returned rows
// may reference tensors produced on `g`.
template <typename Real>
StageExample<Real> build_stage_example(Graph<Real>& g, const BoundParams<Real>& bp,
                                       const Sample& s, int stage, const TrainConfig& tc,
                                       Tensor<Real> z_pure) {
    StageExample<Real> ex;
    const Variant v = tc.variant;
    const int n_eff =
        variant_uses_latent(v) ? std::min(stage, (int)s.steps.size()) : 0;
    ex.n_latent_eff = n_eff;

    if (v == Variant::no_latent_part) {
        // Static stand-in blocks: no prefix forwards are needed because the
        // inserted rows are plain token embeddings.
        LatentState<Real> st = build_base_state<Real>(s, 0);
        for (int i = 0; i < n_eff; ++i) {
            st.rows.push_back(
                RowSpec<Real>::tok(tok::kLatent, Tag::latent_text, (int)st.rows.size()));
            st.rows.push_back(
                RowSpec<Real>::tok(tok::kLatent, Tag::placeholder, (int)st.rows.size()));
        }
        ex.rows = std::move(st.rows);
    } else if (variant_uses_latent(v) && n_eff > 0) {
        LatentState<Real> st = build_base_state<Real>(s, n_eff);
        run_latent_phase(g, bp, st, z_pure, tc.latent_options(v));
        ex.rows = std::move(st.rows);
    } else {
        ex.rows = std::move(build_base_state<Real>(s, 0).rows);
    }

    auto append_supervised = [&](int id, Tag tag) {
        ex.loss_rows.push_back((int)ex.rows.size() - 1);
        ex.loss_targets.push_back(id);
        ex.rows.push_back(RowSpec<Real>::tok(id, tag, (int)ex.rows.size()));
    };
    if (v != Variant::no_cot) {
        const int from = (v == Variant::explicit_cot) ? 0 : n_eff;
        for (size_t i = (size_t)from; i < s.steps.size(); ++i) {
            for (int id : s.steps[i]) append_supervised(id, Tag::rationale);
            append_supervised(tok::kStep, Tag::rationale);
        }
    }
    for (int id : s.answer) append_supervised(id, Tag::answer);
    append_supervised(tok::kEos, Tag::answer);
    return ex;
}

// Batch loss: sum of per-sample NLL sums, scaled once by the reciprocal of
// the total supervised-position count. One graph, parameters bound once.
template <typename Real>
std::pair<Tensor<Real>, int> stage_loss(Graph<Real>& g, const BoundParams<Real>& bp,
                                        const std::vector<const Sample*>& batch, int stage,
                                        const TrainConfig& tc) {
    if (batch.empty()) throw ContractError("stage_loss over an empty batch");
    Tensor<Real> total{};
    int count = 0;
    for (const Sample* s : batch) {
        Tensor<Real> z = render_image(g, bp, s->grid);
        auto ex = build_stage_example(g, bp, *s, stage, tc, z);
        auto fr = forward(g, bp, build_input(g, bp, ex.rows, (int)ex.rows.size(), z));
        Tensor<Real> nll = g.masked_nll(fr.logits, ex.loss_rows, ex.loss_targets);
        count += (int)ex.loss_rows.size();
        total = total.valid() ? g.add(total, nll) : nll;
    }
    return {g.scale(total, 1.0 / (double)count), count};
}

/* ---- optimizer ----------------------------------------------------------------- */

// Adam with global-norm gradient clipping. Moments live in double and are
// reset at every stage boundary, which keeps a stage's outcome a pure
// function of (parameters at stage entry, stage index, seed).
template <typename Real>
class Adam {
public:
    Adam(const Params<Real>& p, double lr, double beta1, double beta2, double eps)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(p.count());
        v_.resize(p.count());
        for (size_t i = 0; i < p.count(); ++i) {
            m_[i].assign(p.tensors[i].values.size(), 0.0);
            v_[i].assign(p.tensors[i].values.size(), 0.0);
        }
    }

    void step(Params<Real>& p, const std::vector<Tensor<Real>>& handles, double clip) {
        if (handles.size() != p.count()) throw ContractError("optimizer/parameter mismatch");
        double sq = 0.0;
        for (const auto& h : handles) {
            if (h.grad().empty()) throw ContractError("parameter has no gradient");
            for (Real gv : h.grad()) sq += (double)gv * (double)gv;
        }
        const double norm = std::sqrt(sq);
        if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
        const double factor = norm > clip ? clip / norm : 1.0;

        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, (double)t_);
        const double bc2 = 1.0 - std::pow(beta2_, (double)t_);
        for (size_t i = 0; i < handles.size(); ++i) {
            const auto grad = handles[i].grad();
            auto& vals = p.tensors[i].values;
            for (size_t j = 0; j < vals.size(); ++j) {
                const double gv = (double)grad[j] * factor;
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gv;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gv * gv;
                const double update =
                    lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
                vals[j] = (Real)((double)vals[j] - update);
            }
        }
    }

    int steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/* ---- training loop ----------------------------------------------------------------- */

struct EpochLog {
    int stage = 0;
    int epoch = 0;
    double mean_loss = 0.0;
    double wallclock_ms = 0.0;
};

using LogSink = std::function<void(const EpochLog&)>;

template <typename Real>
void train_stage(Params<Real>& params, const std::vector<Sample>& data, int stage,
                 const TrainConfig& tc, const LogSink& sink = {}) {
    tc.validate(params.cfg);
    if (data.empty()) throw DataError("training split is empty");
    Adam<Real> opt(params, tc.lr, tc.beta1, tc.beta2, tc.adam_eps);

    for (int epoch = 0; epoch < tc.epochs_per_stage; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<int> order((size_t)data.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;
        Rng shuffle_rng(
            derive_seed(tc.seed, "shuffle", ((uint64_t)stage << 32) | (uint64_t)epoch));
        shuffle_rng.shuffle(order);

        double loss_weighted = 0.0;
        long total_positions = 0;
        for (size_t at = 0; at < order.size(); at += (size_t)tc.batch_size) {
            std::vector<const Sample*> batch;
            for (size_t b = at; b < std::min(order.size(), at + (size_t)tc.batch_size); ++b)
                batch.push_back(&data[(size_t)order[b]]);

            Graph<Real> g;
            auto bp = bind_params(g, params, true);
            auto [loss, count] = stage_loss(g, bp, batch, stage, tc);
            const double lv = (double)loss.values()[0];
            if (!std::isfinite(lv)) throw NumericError("training loss diverged");
            g.backward(loss);
            opt.step(params, bp.handles, tc.grad_clip);
            loss_weighted += lv * (double)count;
            total_positions += count;
        }

        if (sink) {
            EpochLog log;
            log.stage = stage;
            log.epoch = epoch;
            log.mean_loss = loss_weighted / (double)total_positions;
            log.wallclock_ms = std::chrono::duration<double, std::milli>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count();
            sink(log);
        }
    }
}

// Ablation baselines ignore the stage index in their layout but still train
// for the same n_stages * epochs_per_stage total epochs.
template <typename Real>
void train_curriculum(Params<Real>& params, const std::vector<Sample>& data,
                      const TrainConfig& tc, const LogSink& sink = {},
                      const std::function<void(int, const Params<Real>&)>& after_stage = {},
                      int first_stage = 0) {
    tc.validate(params.cfg);
    if (first_stage < 0 || first_stage >= tc.n_stages)
        throw ContractError("first_stage outside the curriculum");
    for (int stage = first_stage; stage < tc.n_stages; ++stage) {
        train_stage(params, data, stage, tc, sink);
        if (after_stage) after_stage(stage, params);
    }
}

}  // namespace mlr
