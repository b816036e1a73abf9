#pragma once

// Decoder-only transformer over mixed token/image/latent rows.
//
// The sequence is a list of row specs rather than token ids: a row embeds a
// vocabulary token, an image patch, a tensor produced earlier on the same
// graph (latent feedback), or a raw vector copied out of a previous graph.
// Every row carries a frozen position id — once a row has been consumed by a
// forward pass its position never changes, even though later rows may be
// inserted behind it.

#include <nlohmann/json.hpp>

#include "mlr/graph.hpp"
#include "mlr/tasks.hpp"

namespace mlr {

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 64;
    int d_ff = 256;
    int vocab_size = kVocabSize;
    int n_patches = kGridCells;
    int max_seq_len = 160;

    int head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1)
            throw ConfigError("model dimensions must be positive");
        if (d_model % n_heads != 0)
            throw ConfigError("d_model must be divisible by n_heads");
        if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
        if (n_patches < 1) throw ConfigError("n_patches must be positive");
        if (max_seq_len < 8) throw ConfigError("max_seq_len must be at least 8");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},   {"d_model", c.d_model},
            {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size},
            {"n_patches", c.n_patches}, {"max_seq_len", c.max_seq_len}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> keys = {"d_ff",      "d_model",    "max_seq_len",
                                                  "n_heads",   "n_layers",   "n_patches",
                                                  "vocab_size"};
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
            throw ConfigError("model config has unknown key '" + it.key() + "'");
    ModelConfig c;
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_model = j.value("d_model", c.d_model);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.n_patches = j.value("n_patches", c.n_patches);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.validate();
    return c;
}

/* ---- parameters ----------------------------------------------------------- */

// Canonical parameter order. Checkpoints, optimizer state, and graph binding
// all walk this exact sequence.
inline std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, Shape>> out;
    const int d = cfg.d_model, dh = cfg.head_dim();
    out.push_back({"tok_embed", {cfg.vocab_size, d}});
    out.push_back({"pos_embed", {cfg.max_seq_len, d}});
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string lp = "layers." + std::to_string(l) + ".";
        for (int h = 0; h < cfg.n_heads; ++h) {
            const std::string hp = lp + "attn.head" + std::to_string(h) + ".";
            out.push_back({hp + "wq", {d, dh}});
            out.push_back({hp + "wk", {d, dh}});
            out.push_back({hp + "wv", {d, dh}});
            out.push_back({hp + "wo", {dh, d}});
        }
        out.push_back({lp + "ffn.w1", {d, cfg.d_ff}});
        out.push_back({lp + "ffn.b1", {1, cfg.d_ff}});
        out.push_back({lp + "ffn.w2", {cfg.d_ff, d}});
        out.push_back({lp + "ffn.b2", {1, d}});
    }
    out.push_back({"head_w", {cfg.vocab_size, d}});
    return out;
}

template <typename Real>
struct Params {
    ModelConfig cfg;
    std::vector<std::string> names;
    std::vector<TensorData<Real>> tensors;

    size_t count() const { return tensors.size(); }

    size_t index_of(std::string_view name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw ContractError("no parameter named '" + std::string(name) + "'");
    }

    TensorData<Real>& at(std::string_view name) { return tensors[index_of(name)]; }
    const TensorData<Real>& at(std::string_view name) const { return tensors[index_of(name)]; }

    size_t total_values() const {
        size_t n = 0;
        for (const auto& t : tensors) n += t.values.size();
        return n;
    }
};

namespace detail {

inline bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace detail

// Deterministic init: each tensor draws from its own named stream, so values
// do not depend on layout position. The structure is chosen so the circuits a
// pretrained backbone would supply already exist in weak form:
//   - wk starts as a copy of wq, so attention begins content-matching (a
//     query prefers keys whose residual content resembles its own);
//   - positional embeddings start as sinusoids, so nearby positions look
//     similar and content-matching heads begin with a local bias;
//   - wo starts as wv^T (scaled), so a head initially transports a sketch of
//     whatever it attends to into the residual stream;
//   - head_w starts as a copy of tok_embed, so transported token-embedding
//     content decodes to that token's logit from step one.
// All of it remains trainable and drifts freely afterwards. FFN weights and
// w2/wo magnitudes follow the usual residual-exit shrink of 1/sqrt(2*depth).
template <typename Real>
Params<Real> init_params(const ModelConfig& cfg, uint64_t seed, double init_scale = 0.08,
                         double qk_scale = 0.30) {
    cfg.validate();
    Params<Real> p;
    p.cfg = cfg;
    const double resid = init_scale / std::sqrt(2.0 * cfg.n_layers);
    std::vector<Real> tok_embed_vals;
    std::vector<Real> last_wq, last_wv;
    for (const auto& [name, shape] : param_layout(cfg)) {
        TensorData<Real> t;
        t.shape = shape;
        t.requires_grad = true;
        t.values.resize(numel(shape));
        const bool bias = detail::ends_with(name, ".b1") || detail::ends_with(name, ".b2");
        const bool exit_proj = detail::ends_with(name, ".w2");
        if (name == "pos_embed") {
            const int d = cfg.d_model;
            for (int i = 0; i < shape[0]; ++i)
                for (int c = 0; c < d; ++c) {
                    const double freq = std::pow(10000.0, -2.0 * (c / 2) / (double)d);
                    const double v = (c % 2 == 0) ? std::sin(i * freq) : std::cos(i * freq);
                    t.values[(size_t)i * (size_t)d + (size_t)c] = (Real)(v * init_scale);
                }
        } else if (name == "head_w") {
            t.values = tok_embed_vals;
        } else if (detail::ends_with(name, ".wk")) {
            t.values = last_wq;
        } else if (detail::ends_with(name, ".wo")) {
            // wo = wv^T, shrunk like a residual-exit projection.
            const int d = cfg.d_model, dh = cfg.head_dim();
            for (int a = 0; a < dh; ++a)
                for (int b = 0; b < d; ++b)
                    t.values[(size_t)a * (size_t)d + (size_t)b] =
                        (Real)(last_wv[(size_t)b * (size_t)dh + (size_t)a] * resid /
                               init_scale);
        } else if (!bias) {
            Rng rng(derive_seed(seed, name));
            const double s = detail::ends_with(name, ".wq") ? qk_scale
                             : exit_proj                    ? resid
                                                            : init_scale;
            for (auto& v : t.values) v = (Real)(s * rng.normal());
            if (name == "tok_embed") tok_embed_vals = t.values;
            if (detail::ends_with(name, ".wq")) last_wq = t.values;
            if (detail::ends_with(name, ".wv")) last_wv = t.values;
        }
        p.names.push_back(name);
        p.tensors.push_back(std::move(t));
    }
    return p;
}

// Parameter handles bound to one graph, plus the flat canonical list the
// optimizer walks. Bind once per graph; rebinding duplicates leaves.
template <typename Real>
struct BoundParams {
    ModelConfig cfg;
    std::vector<Tensor<Real>> handles;

    Tensor<Real> tok_embed, pos_embed, head_w;
    struct Head {
        Tensor<Real> wq, wk, wv, wo;
    };
    struct Layer {
        std::vector<Head> heads;
        Tensor<Real> w1, b1, w2, b2;
    };
    std::vector<Layer> layers;
};

template <typename Real>
BoundParams<Real> bind_params(Graph<Real>& g, const Params<Real>& p, bool trainable) {
    const auto layout = param_layout(p.cfg);
    if (p.names.size() != layout.size())
        throw ContractError("parameter set does not match model layout");
    BoundParams<Real> bp;
    bp.cfg = p.cfg;
    bp.handles.reserve(layout.size());
    for (size_t i = 0; i < layout.size(); ++i) {
        if (p.names[i] != layout[i].first || p.tensors[i].shape != layout[i].second)
            throw ContractError("parameter " + p.names[i] + " does not match layout entry " +
                                layout[i].first);
        bp.handles.push_back(g.leaf(p.tensors[i].shape, p.tensors[i].values, trainable));
    }
    size_t c = 0;
    bp.tok_embed = bp.handles[c++];
    bp.pos_embed = bp.handles[c++];
    bp.layers.resize((size_t)p.cfg.n_layers);
    for (auto& layer : bp.layers) {
        layer.heads.resize((size_t)p.cfg.n_heads);
        for (auto& h : layer.heads) {
            h.wq = bp.handles[c++];
            h.wk = bp.handles[c++];
            h.wv = bp.handles[c++];
            h.wo = bp.handles[c++];
        }
        layer.w1 = bp.handles[c++];
        layer.b1 = bp.handles[c++];
        layer.w2 = bp.handles[c++];
        layer.b2 = bp.handles[c++];
    }
    bp.head_w = bp.handles[c++];
    if (c != bp.handles.size()) throw ContractError("parameter binding walked a partial layout");
    return bp;
}

/* ---- sequence rows --------------------------------------------------------- */

enum class Tag : uint8_t { text, image, placeholder, latent_text, latent_vision, rationale, answer };

template <typename Real>
struct RowSpec {
    enum class Kind : uint8_t { token, patch, tensor, raw };
    Kind kind = Kind::token;
    int token = -1;            // Kind::token
    int patch = -1;            // Kind::patch: row index into the patch matrix
    Tensor<Real> ref{};        // Kind::tensor: [1, d] node on the active graph
    std::vector<Real> raw;     // Kind::raw: values copied from a previous graph
    int pos_id = -1;           // frozen position; -1 until materialized
    Tag tag = Tag::text;

    static RowSpec tok(int id, Tag t, int pos = -1) {
        RowSpec r;
        r.kind = Kind::token;
        r.token = id;
        r.tag = t;
        r.pos_id = pos;
        return r;
    }
    static RowSpec patch_row(int j, int pos = -1) {
        RowSpec r;
        r.kind = Kind::patch;
        r.patch = j;
        r.tag = Tag::image;
        r.pos_id = pos;
        return r;
    }
    static RowSpec tensor_row(Tensor<Real> t, Tag tag, int pos = -1) {
        RowSpec r;
        r.kind = Kind::tensor;
        r.ref = t;
        r.tag = tag;
        r.pos_id = pos;
        return r;
    }
    static RowSpec raw_row(std::vector<Real> v, Tag tag, int pos = -1) {
        RowSpec r;
        r.kind = Kind::raw;
        r.raw = std::move(v);
        r.tag = tag;
        r.pos_id = pos;
        return r;
    }
};

template <typename Real>
using Rows = std::vector<RowSpec<Real>>;

// Pure patch embeddings, tied to the token table: each cell embeds as the sum
// of the embeddings of its digit word, its marker word, and its cell-name
// word (the patch-position term). No sequence position. Selected rows are
// re-used later exactly as produced here.
template <typename Real>
Tensor<Real> render_image(Graph<Real>& g, const BoundParams<Real>& bp, const PatchGrid& grid) {
    if (bp.cfg.n_patches != kGridCells)
        throw ConfigError("model n_patches does not match grid size");
    std::vector<int> digits(kGridCells), markers(kGridCells), cells(kGridCells);
    for (int i = 0; i < kGridCells; ++i) {
        digits[(size_t)i] = tok::kDigit0 + grid.digit[(size_t)i];
        markers[(size_t)i] = marker_token(grid.marker[(size_t)i]);
        cells[(size_t)i] = tok::kCell0 + i;
    }
    auto z = g.add(g.embed_lookup(bp.tok_embed, digits), g.embed_lookup(bp.tok_embed, markers));
    return g.add(z, g.embed_lookup(bp.tok_embed, cells));
}

// Assemble the [T, d] input for rows [0, upto): embed runs of tokens, slice
// patch rows out of z_pure, splice in tensor/raw rows, then add positional
// embeddings for each row's frozen position id.
template <typename Real>
Tensor<Real> build_input(Graph<Real>& g, const BoundParams<Real>& bp, const Rows<Real>& rows,
                         int upto, Tensor<Real> z_pure) {
    using Kind = typename RowSpec<Real>::Kind;
    if (upto <= 0 || upto > (int)rows.size())
        throw ContractError("build_input: bad prefix length " + std::to_string(upto));
    std::vector<Tensor<Real>> segs;
    int i = 0;
    while (i < upto) {
        const auto& r = rows[(size_t)i];
        if (r.kind == Kind::token) {
            std::vector<int> ids;
            while (i < upto && rows[(size_t)i].kind == Kind::token) {
                const int id = rows[(size_t)i].token;
                if (id < 0 || id >= bp.cfg.vocab_size)
                    throw ContractError("token id out of vocabulary: " + std::to_string(id));
                ids.push_back(id);
                ++i;
            }
            segs.push_back(g.embed_lookup(bp.tok_embed, ids));
        } else if (r.kind == Kind::patch) {
            if (!z_pure.valid()) throw ContractError("patch row without a rendered image");
            const int j0 = r.patch;
            int len = 1;
            while (i + len < upto && rows[(size_t)(i + len)].kind == Kind::patch &&
                   rows[(size_t)(i + len)].patch == j0 + len)
                ++len;
            if (j0 < 0 || j0 + len > z_pure.rows())
                throw ContractError("patch index out of range: " + std::to_string(j0));
            segs.push_back(g.slice_rows(z_pure, j0, j0 + len));
            i += len;
        } else if (r.kind == Kind::tensor) {
            if (!r.ref.valid() || r.ref.graph != &g)
                throw ContractError("tensor row is not a node of the active graph");
            if (r.ref.rows() != 1 || r.ref.cols() != bp.cfg.d_model)
                throw ShapeError("tensor row must be [1, d_model]");
            segs.push_back(r.ref);
            ++i;
        } else {
            if ((int)r.raw.size() != bp.cfg.d_model)
                throw ShapeError("raw row must hold d_model values");
            segs.push_back(g.constant({1, bp.cfg.d_model}, r.raw));
            ++i;
        }
    }
    std::vector<int> pos_ids;
    pos_ids.reserve((size_t)upto);
    for (int t = 0; t < upto; ++t) {
        const int pid = rows[(size_t)t].pos_id;
        if (pid < 0)
            throw ContractError("row " + std::to_string(t) + " consumed before its position was set");
        if (pid >= bp.cfg.max_seq_len)
            throw CapacityError("position " + std::to_string(pid) + " exceeds max_seq_len " +
                                std::to_string(bp.cfg.max_seq_len));
        pos_ids.push_back(pid);
    }
    Tensor<Real> x = segs.size() == 1 ? segs[0] : g.concat_rows(segs);
    return g.add(x, g.embed_lookup(bp.pos_embed, pos_ids));
}

/* ---- forward ----------------------------------------------------------------- */

template <typename Real>
Tensor<Real> causal_mask(Graph<Real>& g, int T) {
    std::vector<Real> m((size_t)T * (size_t)T, (Real)0);
    for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) m[(size_t)i * (size_t)T + (size_t)j] = (Real)-1e9;
    return g.constant({T, T}, m);
}

template <typename Real>
struct ForwardResult {
    Tensor<Real> x_in;                             // [T, d] embedded input
    std::vector<std::vector<Tensor<Real>>> attn;   // [layer][head] -> [T, T] probabilities
    Tensor<Real> hidden;                           // [T, d] last layer output, pre final norm
    Tensor<Real> normed;                           // [T, d] after final norm
    Tensor<Real> logits;                           // [T, vocab]
    int T = 0;
};

// Pre-norm transformer block stack. Head outputs are summed (each head has
// its own output projection back to d_model), residual connections carry x.
template <typename Real>
ForwardResult<Real> forward(Graph<Real>& g, const BoundParams<Real>& bp, Tensor<Real> x_in) {
    const int T = x_in.rows();
    if (x_in.cols() != bp.cfg.d_model) throw ShapeError("forward: input must be [T, d_model]");
    const double inv_sqrt_dh = 1.0 / std::sqrt((double)bp.cfg.head_dim());
    Tensor<Real> mask = causal_mask(g, T);

    ForwardResult<Real> out;
    out.x_in = x_in;
    out.T = T;
    Tensor<Real> x = x_in;
    for (const auto& layer : bp.layers) {
        Tensor<Real> xn = g.layer_norm(x);
        Tensor<Real> attn_sum{};
        std::vector<Tensor<Real>> head_probs;
        for (const auto& h : layer.heads) {
            Tensor<Real> q = g.matmul(xn, h.wq);
            Tensor<Real> k = g.matmul(xn, h.wk);
            Tensor<Real> v = g.matmul(xn, h.wv);
            Tensor<Real> s = g.add(g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_dh), mask);
            Tensor<Real> p = g.softmax_rows(s);
            head_probs.push_back(p);
            Tensor<Real> o = g.matmul(g.matmul(p, v), h.wo);
            attn_sum = attn_sum.valid() ? g.add(attn_sum, o) : o;
        }
        out.attn.push_back(std::move(head_probs));
        x = g.add(x, attn_sum);
        Tensor<Real> ff = g.matmul(g.gelu(g.add(g.matmul(g.layer_norm(x), layer.w1), layer.b1)),
                                   layer.w2);
        x = g.add(x, g.add(ff, layer.b2));
    }
    out.hidden = x;
    out.normed = g.layer_norm(x);
    out.logits = g.matmul(out.normed, g.transpose(bp.head_w));
    return out;
}

// Greedy choice with a deterministic tie rule: the lowest token id wins.
template <typename Real>
int argmax_token(std::span<const Real> logits_row) {
    if (logits_row.empty()) throw ContractError("argmax over empty logits");
    int best = 0;
    for (int j = 1; j < (int)logits_row.size(); ++j)
        if (logits_row[(size_t)j] > logits_row[(size_t)best]) best = j;
    return best;
}

// Logits of the final row, as plain values.
template <typename Real>
std::vector<Real> next_token_logits(const ForwardResult<Real>& fr) {
    const auto v = fr.logits.values();
    const int V = fr.logits.cols();
    return std::vector<Real>(v.begin() + (size_t)(fr.T - 1) * (size_t)V, v.end());
}

}  // namespace mlr
