#pragma once

// Grid-Sum: the synthetic multimodal benchmark. A 4x4 grid of digit cells
// carries one start marker and directional arrows. The question states the
// first direction and the hop count; the walk then follows the arrow found
// in each visited cell. The answer is the option letter whose value equals
// the sum of all visited digits (start cell included).
//
// Everything is generated from (seed, index) alone, so regeneration is
// byte-identical and samples can be built in any order.

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mlr/vocab.hpp"

namespace mlr {

constexpr int kGridSide = 4;
constexpr int kGridCells = kGridSide * kGridSide;
constexpr int kNumOptions = 4;
constexpr int kMaxRationaleSteps = 3;

enum class Marker : uint8_t { plain = 0, start = 1, up = 2, down = 3, left = 4, right = 5 };
constexpr int kNumMarkers = 6;

inline const char* marker_str(Marker m) {
    switch (m) {
        case Marker::plain: return "plain";
        case Marker::start: return "start";
        case Marker::up: return "up";
        case Marker::down: return "down";
        case Marker::left: return "left";
        case Marker::right: return "right";
    }
    return "?";
}

inline Marker marker_from_str(std::string_view s) {
    for (int i = 0; i < kNumMarkers; ++i)
        if (s == marker_str((Marker)i)) return (Marker)i;
    throw DataError("unknown marker: '" + std::string(s) + "'");
}

// Vocabulary id of the word naming this marker ("plain", "start", "up", ...).
inline int marker_token(Marker m) {
    switch (m) {
        case Marker::plain: return tok::kPlain;
        case Marker::start: return tok::kStart;
        case Marker::up: return tok::kUp;
        case Marker::down: return tok::kUp + 1;
        case Marker::left: return tok::kUp + 2;
        case Marker::right: return tok::kUp + 3;
    }
    throw DataError("invalid marker value");
}

struct PatchGrid {
    std::array<uint8_t, kGridCells> digit{};  // 0..9, row-major
    std::array<Marker, kGridCells> marker{};

    int start_cell() const {
        int found = -1;
        for (int i = 0; i < kGridCells; ++i) {
            if (marker[(size_t)i] == Marker::start) {
                if (found >= 0) throw DataError("grid has more than one start marker");
                found = i;
            }
        }
        if (found < 0) throw DataError("grid has no start marker");
        return found;
    }
};

struct SampleMeta {
    int n_native_steps = 0;
    int difficulty = 0;  // hop count
};

struct Sample {
    std::string id;
    std::vector<int> question;               // token ids, <bos> is added by the model
    PatchGrid grid;
    std::vector<std::vector<int>> steps;     // segmented rationale, 1..3 entries
    std::vector<int> answer;                 // option letter token
    char answer_label = '?';
    SampleMeta meta;
};

struct GenSpec {
    int n = 2500;
    uint64_t seed = 7;
    int hop_count = 3;               // hops for full-length samples (2..4)
    double short_fraction = 0.2;     // portion kept at 1-2 rationale steps
};

struct Dataset {
    GenSpec spec;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

/* ---- walk mechanics ----------------------------------------------------- */

// Direction encoding shared by markers and tokens: up/down/left/right.
inline int direction_token(Marker m) {
    switch (m) {
        case Marker::up: return tok::kUp;
        case Marker::down: return tok::kUp + 1;
        case Marker::left: return tok::kUp + 2;
        case Marker::right: return tok::kUp + 3;
        default: throw DataError("marker is not an arrow");
    }
}

// Returns the neighbor cell index, or -1 when the move leaves the grid.
inline int step_cell(int cell, Marker dir) {
    int r = cell / kGridSide, c = cell % kGridSide;
    switch (dir) {
        case Marker::up: r -= 1; break;
        case Marker::down: r += 1; break;
        case Marker::left: c -= 1; break;
        case Marker::right: c += 1; break;
        default: throw DataError("not a direction marker");
    }
    if (r < 0 || r >= kGridSide || c < 0 || c >= kGridSide) return -1;
    return r * kGridSide + c;
}

/* ---- rationale segmentation --------------------------------------------- */

// Merge native step sentences into at most max_steps contiguous groups.
// Groups are balanced; earlier groups absorb the remainder, so 10 -> [4,3,3]
// and 7 -> [3,2,2]. Three or fewer sentences pass through unchanged.
inline std::vector<std::vector<int>> segment_rationale(
    const std::vector<std::vector<int>>& native, int max_steps = kMaxRationaleSteps) {
    if (max_steps < 1) throw ContractError("segment_rationale: max_steps must be >= 1");
    if (native.empty()) throw ContractError("segment_rationale: no native steps");
    const int n = (int)native.size();
    if (n <= max_steps) return native;

    const int q = n / max_steps, r = n % max_steps;
    std::vector<std::vector<int>> out;
    int at = 0;
    for (int gi = 0; gi < max_steps; ++gi) {
        const int len = q + (gi < r ? 1 : 0);
        std::vector<int> merged;
        for (int s = 0; s < len; ++s) {
            merged.insert(merged.end(), native[(size_t)at].begin(), native[(size_t)at].end());
            ++at;
        }
        out.push_back(std::move(merged));
    }
    return out;
}

/* ---- generation ---------------------------------------------------------- */

namespace detail {

// Self-avoiding walk of `hops` moves from a random start. Retries on dead
// ends; a 4x4 grid always admits walks of the lengths used here.
inline std::vector<int> random_walk(Rng& rng, int hops) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<int> path;
        path.push_back((int)rng.uniform_int(kGridCells));
        bool dead = false;
        for (int h = 0; h < hops; ++h) {
            std::vector<int> open;
            for (int d = 0; d < 4; ++d) {
                const int nxt = step_cell(path.back(), (Marker)((int)Marker::up + d));
                if (nxt >= 0 && std::find(path.begin(), path.end(), nxt) == path.end())
                    open.push_back(nxt);
            }
            if (open.empty()) {
                dead = true;
                break;
            }
            path.push_back(open[(size_t)rng.uniform_int(open.size())]);
        }
        if (!dead) return path;
    }
    throw DataError("random_walk: could not place a path");
}

inline Marker direction_between(int from, int to) {
    for (int d = 0; d < 4; ++d) {
        const Marker m = (Marker)((int)Marker::up + d);
        if (step_cell(from, m) == to) return m;
    }
    throw DataError("cells are not adjacent");
}

}  // namespace detail

inline Sample generate_sample(const GenSpec& spec, int index, bool short_sample) {
    Rng rng(derive_seed(spec.seed, "sample", (uint64_t)index));
    const int hops = short_sample ? (int)rng.uniform_int(2) : spec.hop_count;

    Sample s;
    {
        std::ostringstream id;
        id << "gs-" << spec.seed << "-";
        id.fill('0');
        id.width(5);
        id << index;
        s.id = id.str();
    }

    for (int i = 0; i < kGridCells; ++i) s.grid.digit[(size_t)i] = (uint8_t)rng.uniform_int(10);

    const std::vector<int> path = detail::random_walk(rng, hops);
    s.grid.marker.fill(Marker::plain);
    s.grid.marker[(size_t)path[0]] = Marker::start;
    // Cells reached by hops 1..hops-1 carry the arrow for the next hop; the
    // first hop's direction lives in the question instead.
    for (int i = 1; i + 1 <= hops; ++i)
        s.grid.marker[(size_t)path[(size_t)i]] =
            detail::direction_between(path[(size_t)i], path[(size_t)i + 1]);
    // Decoy arrows on off-path cells; the walk never consults them.
    for (int i = 0; i < kGridCells; ++i) {
        if (std::find(path.begin(), path.end(), i) != path.end()) continue;
        if (rng.uniform() < 0.3)
            s.grid.marker[(size_t)i] = (Marker)((int)Marker::up + (int)rng.uniform_int(4));
    }

    int total = 0;
    for (int cell : path) total += s.grid.digit[(size_t)cell];

    // Options: the true sum plus three distinct distractors within +-3.
    std::vector<int> candidates;
    for (int v = std::max(0, total - 3); v <= total + 3; ++v)
        if (v != total) candidates.push_back(v);
    rng.shuffle(candidates);
    std::vector<int> values = {total, candidates[0], candidates[1], candidates[2]};
    rng.shuffle(values);
    const int answer_ix =
        (int)(std::find(values.begin(), values.end(), total) - values.begin());
    s.answer_label = (char)('A' + answer_ix);
    s.answer = {tok::kLetterA + answer_ix};

    auto& q = s.question;
    q.push_back(token_id("start"));
    if (hops >= 1) {
        q.push_back(token_id("go"));
        q.push_back(direction_token(detail::direction_between(path[0], path[1])));
    }
    q.push_back(token_id("follow"));
    q.push_back(tok::kDigit0 + hops);
    q.push_back(token_id("arrows"));
    q.push_back(token_id("sum"));
    q.push_back(token_id("visited"));
    q.push_back(token_id("digits"));
    q.push_back(token_id("?"));
    // Options list each value's digits first, then the letter naming it.
    for (int o = 0; o < kNumOptions; ++o) {
        const auto digits = number_tokens(values[(size_t)o]);
        q.insert(q.end(), digits.begin(), digits.end());
        q.push_back(tok::kLetterA + o);
    }

    // Native rationale: one sentence for the start cell, one per hop. Each
    // sentence names the visited cell, that cell's outgoing marker, its
    // digit, and the running sum.
    std::vector<std::vector<int>> native;
    {
        const int c0 = path[0];
        std::vector<int> st = {token_id("start"), tok::kCell0 + c0,
                               tok::kDigit0 + s.grid.digit[(size_t)c0], token_id("sum")};
        auto sum_toks = number_tokens(s.grid.digit[(size_t)c0]);
        st.insert(st.end(), sum_toks.begin(), sum_toks.end());
        native.push_back(std::move(st));
    }
    int running = s.grid.digit[(size_t)path[0]];
    for (int h = 1; h <= hops; ++h) {
        const int cell = path[(size_t)h];
        running += s.grid.digit[(size_t)cell];
        std::vector<int> st = {token_id("move"),
                               direction_token(detail::direction_between(path[(size_t)h - 1], cell)),
                               tok::kCell0 + cell,
                               marker_token(s.grid.marker[(size_t)cell]),
                               tok::kDigit0 + s.grid.digit[(size_t)cell], token_id("sum")};
        auto sum_toks = number_tokens(running);
        st.insert(st.end(), sum_toks.begin(), sum_toks.end());
        native.push_back(std::move(st));
    }
    s.meta.n_native_steps = (int)native.size();
    s.meta.difficulty = hops;
    s.steps = segment_rationale(native);
    return s;
}

// Split by seeded hash of id: the floor(n/5) smallest hashes form the test
// set, so the 80/20 split is exact and stable for a given seed.
inline Dataset generate_dataset(const GenSpec& spec) {
    if (spec.n < 5) throw ConfigError("dataset needs at least 5 samples");
    if (spec.hop_count < 2 || spec.hop_count > 4)
        throw ConfigError("hop_count must be in [2,4]");
    if (spec.short_fraction < 0.0 || spec.short_fraction > 1.0)
        throw ConfigError("short_rationale_fraction must be in [0,1]");

    const int n_short = (int)std::llround(spec.short_fraction * spec.n);
    std::vector<int> order((size_t)spec.n);
    for (int i = 0; i < spec.n; ++i) order[(size_t)i] = i;
    Rng short_rng(derive_seed(spec.seed, "short-split"));
    short_rng.shuffle(order);
    std::vector<bool> is_short((size_t)spec.n, false);
    for (int i = 0; i < n_short; ++i) is_short[(size_t)order[(size_t)i]] = true;

    std::vector<Sample> all;
    all.reserve((size_t)spec.n);
    for (int i = 0; i < spec.n; ++i) all.push_back(generate_sample(spec, i, is_short[(size_t)i]));

    std::vector<std::pair<uint64_t, int>> hashed;
    hashed.reserve(all.size());
    for (int i = 0; i < spec.n; ++i) {
        const std::string key = all[(size_t)i].id + ":" + std::to_string(spec.seed);
        hashed.emplace_back(fnv1a64(key), i);
    }
    std::sort(hashed.begin(), hashed.end());
    const int n_test = spec.n / 5;
    std::vector<bool> in_test((size_t)spec.n, false);
    for (int i = 0; i < n_test; ++i) in_test[(size_t)hashed[(size_t)i].second] = true;

    Dataset ds;
    ds.spec = spec;
    for (int i = 0; i < spec.n; ++i) {
        auto& dst = in_test[(size_t)i] ? ds.test : ds.train;
        dst.push_back(std::move(all[(size_t)i]));
    }
    return ds;
}

/* ---- jsonl serialization ------------------------------------------------- */

inline nlohmann::json sample_to_json(const Sample& s) {
    nlohmann::json g = nlohmann::json::array();
    for (int i = 0; i < kGridCells; ++i)
        g.push_back({(int)s.grid.digit[(size_t)i], marker_str(s.grid.marker[(size_t)i])});
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& st : s.steps) steps.push_back(tokens_to_strings(st));
    return nlohmann::json{
        {"id", s.id},
        {"question_tokens", tokens_to_strings(s.question)},
        {"grid", g},
        {"rationale_steps", steps},
        {"answer_tokens", tokens_to_strings(s.answer)},
        {"answer_label", std::string(1, s.answer_label)},
        {"meta",
         {{"n_native_steps", s.meta.n_native_steps}, {"difficulty", s.meta.difficulty}}},
    };
}

inline Sample sample_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> fields = {
        "answer_label", "answer_tokens", "grid", "id", "meta", "question_tokens",
        "rationale_steps"};
    if (!j.is_object()) throw DataError("sample line is not a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(fields.begin(), fields.end(), it.key()) == fields.end())
            throw DataError("sample has unknown field '" + it.key() + "'");
    for (const auto& f : fields)
        if (!j.contains(f)) throw DataError("sample is missing field '" + f + "'");

    Sample s;
    s.id = j.at("id").get<std::string>();
    s.question = strings_to_tokens(j.at("question_tokens").get<std::vector<std::string>>());
    const auto& g = j.at("grid");
    if (!g.is_array() || g.size() != kGridCells)
        throw DataError("grid must have exactly " + std::to_string(kGridCells) + " cells");
    for (int i = 0; i < kGridCells; ++i) {
        const auto& cell = g[(size_t)i];
        if (!cell.is_array() || cell.size() != 2)
            throw DataError("grid cell must be a [digit, marker] pair");
        const int d = cell[0].get<int>();
        if (d < 0 || d > 9) throw DataError("grid digit out of range");
        s.grid.digit[(size_t)i] = (uint8_t)d;
        s.grid.marker[(size_t)i] = marker_from_str(cell[1].get<std::string>());
    }
    for (const auto& st : j.at("rationale_steps"))
        s.steps.push_back(strings_to_tokens(st.get<std::vector<std::string>>()));
    if (s.steps.empty() || s.steps.size() > kMaxRationaleSteps)
        throw DataError("rationale_steps must hold 1..3 steps");
    s.answer = strings_to_tokens(j.at("answer_tokens").get<std::vector<std::string>>());
    const std::string label = j.at("answer_label").get<std::string>();
    if (label.size() != 1 || label[0] < 'A' || label[0] > 'D')
        throw DataError("answer_label must be A..D");
    s.answer_label = label[0];
    s.meta.n_native_steps = j.at("meta").at("n_native_steps").get<int>();
    s.meta.difficulty = j.at("meta").at("difficulty").get<int>();
    s.grid.start_cell();  // validates marker uniqueness
    return s;
}

inline std::string jsonl_string(const std::vector<Sample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        out += sample_to_json(s).dump();
        out += '\n';
    }
    return out;
}

inline void write_jsonl(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << jsonl_string(samples);
    if (!f) throw DataError("write failed: " + path);
}

inline std::vector<Sample> read_jsonl(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open dataset: " + path);
    std::vector<Sample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        try {
            out.push_back(sample_from_json(j));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace mlr
