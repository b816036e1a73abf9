#pragma once

// Latent reasoning engine. A sequence starts with placeholder rows appended
// after the base (question + image). Each latent step forwards the prefix up
// to the next placeholder, takes the last hidden row as latent text, selects
// image patches by accumulated attention as latent vision, and inserts the
// resulting block immediately before the placeholder. Rows behind the
// insertion point shift; rows in front keep their frozen positions.

#include "mlr/model.hpp"

namespace mlr {

struct LatentOptions {
    int k = 4;                     // patches per step
    bool exclude_previous = true;  // earlier selections never repeat
    bool use_latent_text = true;
    bool use_latent_vision = true;
    bool placeholder_only = false; // block degenerates to a static latent token
    bool capture = false;          // record per-step attention rows

    int block_width() const {
        if (placeholder_only) return 1;
        return (use_latent_text ? 1 : 0) + (use_latent_vision ? k : 0);
    }

    void validate() const {
        if (!placeholder_only && !use_latent_text && !use_latent_vision)
            throw ConfigError("latent block would be empty: enable text, vision, or placeholder mode");
        if (use_latent_vision && !placeholder_only && k < 1)
            throw ConfigError("latent vision needs k >= 1");
    }
};

// Attention row for one query, summed over every layer and head.
template <typename Real>
std::vector<double> summed_attn_row(const ForwardResult<Real>& fr, int query_row) {
    if (query_row < 0 || query_row >= fr.T)
        throw ContractError("attention query row out of range");
    std::vector<double> row((size_t)fr.T, 0.0);
    for (const auto& heads : fr.attn)
        for (const auto& a : heads) {
            const auto v = a.values();
            for (int j = 0; j < fr.T; ++j)
                row[(size_t)j] += (double)v[(size_t)query_row * (size_t)fr.T + (size_t)j];
        }
    return row;
}

// Top-k by score; ties break toward the lower index. Returns fewer than k
// when exclusions leave too few candidates (possibly none). Only an empty
// candidate universe is an error.
inline std::vector<int> select_from_scores(const std::vector<double>& scores, int k,
                                           const std::vector<int>& excluded = {}) {
    if (scores.empty()) throw SelectionError("selection over an empty candidate set");
    if (k < 0) throw ContractError("selection k must be non-negative");
    std::vector<char> blocked(scores.size(), 0);
    for (int e : excluded) {
        if (e < 0 || e >= (int)scores.size())
            throw ContractError("excluded index out of range: " + std::to_string(e));
        blocked[(size_t)e] = 1;
    }
    std::vector<int> cand;
    for (int i = 0; i < (int)scores.size(); ++i)
        if (!blocked[(size_t)i]) cand.push_back(i);
    std::sort(cand.begin(), cand.end(), [&](int a, int b) {
        if (scores[(size_t)a] != scores[(size_t)b]) return scores[(size_t)a] > scores[(size_t)b];
        return a < b;
    });
    if ((int)cand.size() > k) cand.resize((size_t)k);
    return cand;
}

// Patch choice for one step: score each patch by the layer/head-summed
// attention its sequence position receives from the query row, then take the
// top k with the stable tie rule.
template <typename Real>
std::vector<int> select_latent_vision(const ForwardResult<Real>& fr, int query_row,
                                      int img_begin, int img_end, int k,
                                      const std::vector<int>& excluded_patches = {}) {
    if (img_end <= img_begin || img_end > fr.T)
        throw SelectionError("image span is empty or outside the sequence");
    const auto row = summed_attn_row(fr, query_row);
    std::vector<double> scores((size_t)(img_end - img_begin));
    for (int j = img_begin; j < img_end; ++j) scores[(size_t)(j - img_begin)] = row[(size_t)j];
    return select_from_scores(scores, k, excluded_patches);
}

// What the analysis stage needs from one latent step: the summed attention
// row at the query, plus which positions were image vs. reasoning text.
struct StepCapture {
    int step = 0;       // 1-based
    int query_row = 0;  // position the hidden state was read from
    std::vector<double> row;
    std::vector<int> image_positions;
    std::vector<int> text_positions;  // question text + earlier latent-text rows
    std::vector<int> selected;        // patch indices chosen this step
    std::vector<double> patch_scores; // per-patch score the choice was made from
};

template <typename Real>
struct LatentState {
    Rows<Real> rows;
    int text_end = 0;   // rows [0, text_end) are the question text (incl. <bos>)
    int img_begin = 0;
    int img_end = 0;
    std::vector<int> pending;  // row indices of unconsumed placeholders

    struct Block {
        int h_row = -1;               // latent-text row index, -1 if absent
        std::vector<int> z_rows;      // latent-vision row indices
        std::vector<int> patches;     // selected patch ids
        int placeholder_row = -1;     // the placeholder this block precedes
        int insert_at = -1;           // prefix length the step was computed from
    };
    std::vector<Block> blocks;
    std::vector<int> used_patches;
    int forward_passes = 0;
};

// Base layout: [<bos> question][image patches][n placeholder rows]. The
// placeholders carry no position yet; it is frozen when their block lands.
template <typename Real>
LatentState<Real> build_base_state(const Sample& s, int n_latent) {
    if (n_latent < 0) throw ContractError("negative latent step count");
    LatentState<Real> st;
    st.rows.push_back(RowSpec<Real>::tok(tok::kBos, Tag::text, 0));
    for (int id : s.question)
        st.rows.push_back(RowSpec<Real>::tok(id, Tag::text, (int)st.rows.size()));
    st.text_end = (int)st.rows.size();
    st.img_begin = st.text_end;
    for (int j = 0; j < kGridCells; ++j)
        st.rows.push_back(RowSpec<Real>::patch_row(j, (int)st.rows.size()));
    st.img_end = (int)st.rows.size();
    for (int i = 0; i < n_latent; ++i) {
        st.pending.push_back((int)st.rows.size());
        st.rows.push_back(RowSpec<Real>::tok(tok::kLatent, Tag::placeholder));
    }
    return st;
}

// One latent step. Returns the forward result so callers can reuse it (the
// training loss needs no extra pass here; inference discards it).
template <typename Real>
ForwardResult<Real> latent_step(Graph<Real>& g, const BoundParams<Real>& bp,
                                LatentState<Real>& st, Tensor<Real> z_pure,
                                const LatentOptions& opts,
                                std::vector<StepCapture>* captures = nullptr) {
    opts.validate();
    if (st.pending.empty()) throw StagingError("latent_step with no pending placeholder");
    const int p = st.pending.front();
    {
        const auto& ph = st.rows[(size_t)p];
        if (ph.kind != RowSpec<Real>::Kind::token || ph.token != tok::kLatent ||
            ph.tag != Tag::placeholder)
            throw ContractError("pending index does not point at a placeholder row");
    }
    if (p < 1) throw ContractError("placeholder cannot be the first row");

    ForwardResult<Real> fr = forward(g, bp, build_input(g, bp, st.rows, p, z_pure));
    ++st.forward_passes;
    const int query = p - 1;
    const std::vector<double> srow = summed_attn_row(fr, query);

    typename LatentState<Real>::Block blk;
    blk.insert_at = p;
    Rows<Real> block;
    std::vector<double> patch_scores;
    if (opts.placeholder_only) {
        block.push_back(RowSpec<Real>::tok(tok::kLatent, Tag::latent_text));
    } else {
        if (opts.use_latent_text) {
            Tensor<Real> h = g.slice_rows(fr.hidden, p - 1, p);
            block.push_back(RowSpec<Real>::tensor_row(h, Tag::latent_text));
        }
        if (opts.use_latent_vision) {
            const int J = st.img_end - st.img_begin;
            if (J <= 0) throw SelectionError("no image patches in the sequence");
            patch_scores.resize((size_t)J);
            for (int j = 0; j < J; ++j)
                patch_scores[(size_t)j] = srow[(size_t)(st.img_begin + j)];
            const auto sel = select_from_scores(
                patch_scores, opts.k, opts.exclude_previous ? st.used_patches : std::vector<int>{});
            for (int j : sel) block.push_back(RowSpec<Real>::patch_row(j));
            for (auto& r : block)
                if (r.kind == RowSpec<Real>::Kind::patch) r.tag = Tag::latent_vision;
            blk.patches = sel;
            st.used_patches.insert(st.used_patches.end(), sel.begin(), sel.end());
        }
    }

    const int w = (int)block.size();
    st.rows.insert(st.rows.begin() + p, block.begin(), block.end());
    for (int t = p; t < p + w; ++t) st.rows[(size_t)t].pos_id = t;
    st.rows[(size_t)(p + w)].pos_id = p + w;  // the placeholder's index is final now

    int zi = p + (opts.use_latent_text && !opts.placeholder_only ? 1 : 0);
    if (!opts.placeholder_only && opts.use_latent_text) blk.h_row = p;
    if (opts.placeholder_only) blk.h_row = p;  // the static token stands in for latent text
    for (size_t c = 0; c < blk.patches.size(); ++c) blk.z_rows.push_back(zi + (int)c);
    blk.placeholder_row = p + w;
    st.blocks.push_back(blk);

    st.pending.erase(st.pending.begin());
    for (int& q : st.pending) q += w;

    if (captures != nullptr && opts.capture) {
        StepCapture cap;
        cap.step = (int)st.blocks.size();
        cap.query_row = query;
        cap.row = srow;
        for (int j = st.img_begin; j < st.img_end; ++j) cap.image_positions.push_back(j);
        for (int t = 0; t < st.text_end; ++t) cap.text_positions.push_back(t);
        for (size_t b = 0; b + 1 < st.blocks.size(); ++b)
            if (st.blocks[b].h_row >= 0) cap.text_positions.push_back(st.blocks[b].h_row);
        cap.selected = blk.patches;
        cap.patch_scores = std::move(patch_scores);
        captures->push_back(std::move(cap));
    }
    return fr;
}

template <typename Real>
void run_latent_phase(Graph<Real>& g, const BoundParams<Real>& bp, LatentState<Real>& st,
                      Tensor<Real> z_pure, const LatentOptions& opts,
                      std::vector<StepCapture>* captures = nullptr) {
    while (!st.pending.empty()) latent_step(g, bp, st, z_pure, opts, captures);
}

// Copy graph-bound rows out as raw values so the sequence can be replayed on
// a fresh graph. Token and patch rows already survive graph changes.
template <typename Real>
Rows<Real> materialize_rows(const Rows<Real>& rows) {
    Rows<Real> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.kind == RowSpec<Real>::Kind::tensor) {
            if (!r.ref.valid()) throw ContractError("materializing an unbound tensor row");
            const auto v = r.ref.values();
            out.push_back(RowSpec<Real>::raw_row(std::vector<Real>(v.begin(), v.end()), r.tag,
                                                 r.pos_id));
        } else {
            out.push_back(r);
        }
    }
    return out;
}

// Answer = everything after the last step separator (the whole stream when
// no separator was emitted), minus the end marker.
inline std::vector<int> extract_answer(const std::vector<int>& emitted) {
    auto rit = std::find(emitted.rbegin(), emitted.rend(), tok::kStep);
    const size_t begin = (rit == emitted.rend()) ? 0 : (size_t)(emitted.rend() - rit);
    std::vector<int> out;
    for (size_t i = begin; i < emitted.size(); ++i)
        if (emitted[i] != tok::kEos) out.push_back(emitted[i]);
    return out;
}

// One autoregressive step per forward pass: latent steps consume a pass each,
// then every emitted token costs one more.
inline int count_ar_steps(int n_latent_eff, int n_emitted) { return n_latent_eff + n_emitted; }

struct InferResult {
    std::vector<int> emitted;  // decoded tokens, including the end marker
    std::vector<int> answer;
    int n_latent_eff = 0;
    int ar_steps = 0;
    int forward_passes = 0;
    int final_len = 0;
    std::vector<StepCapture> captures;
};

// Full inference: latent phase on one graph, then greedy decoding with a
// fresh graph per emitted token (bounded memory, full re-forward each pass).
template <typename Real>
InferResult infer(const Params<Real>& params, const Sample& s, int n_latent,
                  const LatentOptions& opts, int max_new = 48) {
    opts.validate();
    InferResult r;
    r.n_latent_eff = std::min(n_latent, (int)s.steps.size());

    Rows<Real> rows;
    {
        Graph<Real> g;
        auto bp = bind_params(g, params, false);
        auto z = render_image(g, bp, s.grid);
        LatentState<Real> st = build_base_state<Real>(s, r.n_latent_eff);
        run_latent_phase(g, bp, st, z, opts, &r.captures);
        r.forward_passes = st.forward_passes;
        rows = materialize_rows(st.rows);
    }

    while ((int)r.emitted.size() < max_new && (int)rows.size() < params.cfg.max_seq_len) {
        Graph<Real> g;
        auto bp = bind_params(g, params, false);
        auto z = render_image(g, bp, s.grid);
        auto fr = forward(g, bp, build_input(g, bp, rows, (int)rows.size(), z));
        ++r.forward_passes;
        const int id = argmax_token<Real>(next_token_logits(fr));
        r.emitted.push_back(id);
        rows.push_back(RowSpec<Real>::tok(id, Tag::rationale, (int)rows.size()));
        if (id == tok::kEos) break;
    }

    r.answer = extract_answer(r.emitted);
    r.ar_steps = count_ar_steps(r.n_latent_eff, (int)r.emitted.size());
    r.final_len = (int)rows.size();
    return r;
}

}  // namespace mlr
