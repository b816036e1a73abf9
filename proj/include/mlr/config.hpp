#pragma once

// Run configuration: one JSON document covering model, training schedule,
// latent-block settings, task generation, and IO paths. Unknown keys are
// rejected at every nesting level; parse errors carry line and column.

#include <nlohmann/json.hpp>

#include "mlr/curriculum.hpp"
#include "mlr/tasks.hpp"

namespace mlr {

using nlohmann::json;

// Parse with a line/column diagnostic instead of nlohmann's byte offset.
inline json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        size_t line = 1, col = 1;
        const size_t stop = std::min(text.size(), e.byte == 0 ? (size_t)0 : (size_t)e.byte - 1);
        for (size_t i = 0; i < stop; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw FormatError(origin + ": JSON parse error at line " + std::to_string(line) +
                          ", column " + std::to_string(col));
    }
}

namespace detail {

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                                const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError(where + ": unknown key \"" + key + "\"");
}

template <typename T>
void take(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace detail

/* ---- generation spec ------------------------------------------------------ */

inline json gen_spec_to_json(const GenSpec& g) {
    return json{{"n", g.n},
                {"seed", g.seed},
                {"hop_count", g.hop_count},
                {"short_fraction", g.short_fraction}};
}

inline GenSpec gen_spec_from_json(const json& j) {
    detail::reject_unknown_keys(j, {"n", "seed", "hop_count", "short_fraction"}, "task");
    GenSpec g;
    detail::take(j, "n", g.n);
    detail::take(j, "seed", g.seed);
    detail::take(j, "hop_count", g.hop_count);
    detail::take(j, "short_fraction", g.short_fraction);
    return g;
}

/* ---- training schedule ----------------------------------------------------- */

// The latent-block fields (k, exclusion) and the master seed live in their own
// config sections; the "train" object covers the optimization schedule only.
inline json train_config_to_json(const TrainConfig& t) {
    return json{{"n_stages", t.n_stages},
                {"epochs_per_stage", t.epochs_per_stage},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"grad_clip", t.grad_clip},
                {"variant", variant_str(t.variant)}};
}

inline TrainConfig train_config_from_json(const json& j) {
    detail::reject_unknown_keys(j,
                                {"n_stages", "epochs_per_stage", "batch_size", "lr", "beta1",
                                 "beta2", "adam_eps", "grad_clip", "variant"},
                                "train");
    TrainConfig t;
    detail::take(j, "n_stages", t.n_stages);
    detail::take(j, "epochs_per_stage", t.epochs_per_stage);
    detail::take(j, "batch_size", t.batch_size);
    detail::take(j, "lr", t.lr);
    detail::take(j, "beta1", t.beta1);
    detail::take(j, "beta2", t.beta2);
    detail::take(j, "adam_eps", t.adam_eps);
    detail::take(j, "grad_clip", t.grad_clip);
    if (j.contains("variant")) t.variant = variant_from_str(j.at("variant").get<std::string>());
    return t;
}

/* ---- latent + io sections --------------------------------------------------- */

struct LatentConfig {
    int k = 4;
    bool exclude_previous = true;
    int n_latent_eval = 3;

    void validate() const {
        if (k < 1) throw ConfigError("latent.k must be at least 1");
        if (n_latent_eval < 0) throw ConfigError("latent.n_latent_eval must be non-negative");
    }
};

inline json latent_config_to_json(const LatentConfig& l) {
    return json{{"k", l.k},
                {"exclude_previous", l.exclude_previous},
                {"n_latent_eval", l.n_latent_eval}};
}

inline LatentConfig latent_config_from_json(const json& j) {
    detail::reject_unknown_keys(j, {"k", "exclude_previous", "n_latent_eval"}, "latent");
    LatentConfig l;
    detail::take(j, "k", l.k);
    detail::take(j, "exclude_previous", l.exclude_previous);
    detail::take(j, "n_latent_eval", l.n_latent_eval);
    l.validate();
    return l;
}

struct IoConfig {
    std::string data_dir = "data";
    std::string out_dir = "out";
};

inline json io_config_to_json(const IoConfig& io) {
    return json{{"data_dir", io.data_dir}, {"out_dir", io.out_dir}};
}

inline IoConfig io_config_from_json(const json& j) {
    detail::reject_unknown_keys(j, {"data_dir", "out_dir"}, "io");
    IoConfig io;
    detail::take(j, "data_dir", io.data_dir);
    detail::take(j, "out_dir", io.out_dir);
    return io;
}

/* ---- top-level config -------------------------------------------------------- */

struct Config {
    ModelConfig model;
    TrainConfig train;
    LatentConfig latent;
    GenSpec task;
    IoConfig io;
    uint64_t seed = 1;

    // The TrainConfig consumed by the curriculum, with the latent-section and
    // seed fields folded in.
    TrainConfig resolved_train() const {
        TrainConfig t = train;
        t.k = latent.k;
        t.exclude_previous = latent.exclude_previous;
        t.seed = seed;
        t.validate(model);
        return t;
    }

    LatentOptions eval_latent_options() const {
        LatentOptions o;
        o.k = latent.k;
        o.exclude_previous = latent.exclude_previous;
        return o;
    }
};

inline json config_to_json(const Config& c) {
    return json{{"model", model_config_to_json(c.model)},
                {"train", train_config_to_json(c.train)},
                {"latent", latent_config_to_json(c.latent)},
                {"task", gen_spec_to_json(c.task)},
                {"io", io_config_to_json(c.io)},
                {"seed", c.seed}};
}

inline Config config_from_json(const json& j) {
    detail::reject_unknown_keys(j, {"model", "train", "latent", "task", "io", "seed"},
                                "config");
    Config c;
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("latent")) c.latent = latent_config_from_json(j.at("latent"));
    if (j.contains("task")) c.task = gen_spec_from_json(j.at("task"));
    if (j.contains("io")) c.io = io_config_from_json(j.at("io"));
    detail::take(j, "seed", c.seed);
    c.resolved_train();  // full cross-field validation
    return c;
}

inline Config config_from_text(const std::string& text, const std::string& origin) {
    return config_from_json(parse_json_text(text, origin));
}

}  // namespace mlr
