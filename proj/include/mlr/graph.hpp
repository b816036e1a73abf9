#pragma once

// Reverse-mode tape. Each op appends a record; backward replays the records
// in exact reverse order. One Graph instance lives for one training batch or
// one inference run, then the whole tape is dropped.
//
// Numeric policy: values are stored in Real (float in production), every
// reduction (dot products, softmax normalizers, loss sums, norm statistics)
// accumulates in double. Every op output is scanned for NaN/Inf and fails
// hard, so divergence surfaces at the op that produced it.

#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "mlr/tensor.hpp"

namespace mlr {

enum class OpKind {
    leaf,
    matmul,
    add,
    scale,
    softmax_rows,
    layer_norm,
    gelu,
    embed_lookup,
    concat_rows,
    slice_rows,
    transpose,
    masked_nll,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::scale: return "scale";
        case OpKind::softmax_rows: return "softmax_rows";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::gelu: return "gelu";
        case OpKind::embed_lookup: return "embed_lookup";
        case OpKind::concat_rows: return "concat_rows";
        case OpKind::slice_rows: return "slice_rows";
        case OpKind::transpose: return "transpose";
        case OpKind::masked_nll: return "masked_nll";
    }
    return "?";
}

// Attribute bag for the generic apply() entry point.
struct OpAttrs {
    double scalar = 1.0;         // scale
    int r0 = 0, r1 = 0;          // slice_rows
    std::vector<int> indices;    // embed_lookup ids / masked_nll rows
    std::vector<int> targets;    // masked_nll target token ids
};

template <typename Real>
class Graph;

template <typename Real>
struct Tensor {
    Graph<Real>* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Shape& shape() const { return graph->node(id).shape; }
    int rows() const { return shape()[0]; }
    int cols() const { return shape()[1]; }
    std::span<const Real> values() const { return graph->node(id).values; }
    std::span<const Real> grad() const { return graph->node(id).grad; }
    bool requires_grad() const { return graph->node(id).requires_grad; }
};

namespace detail {

constexpr double kLayerNormEps = 1e-5;

// Streaming product C = A * B (row-major) with one 64-bit accumulator per
// output element, summed over p in ascending order. When Accumulate is set
// the result is added onto C instead of overwriting it; C then carries
// gradient contributions from several consumers.
template <typename Real, bool Accumulate>
void mm_acc64(const Real* a, const Real* b, Real* c, int m, int k, int n,
              std::vector<double>& acc) {
    acc.assign((size_t)n, 0.0);
    double* __restrict__ r = acc.data();
    for (int i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const Real* __restrict__ ar = a + (size_t)i * k;
        for (int p = 0; p < k; ++p) {
            const Real* __restrict__ br = b + (size_t)p * n;
            const double av = (double)ar[p];
            for (int j = 0; j < n; ++j) r[j] += av * (double)br[j];
        }
        Real* __restrict__ cr = c + (size_t)i * n;
        for (int j = 0; j < n; ++j)
            cr[j] = Accumulate ? (Real)((double)cr[j] + r[j]) : (Real)r[j];
    }
}

template <typename Real>
void transpose_copy(const Real* src, int m, int n, Real* dst) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) dst[(size_t)j * m + i] = src[(size_t)i * n + j];
}

// Shared by the masked_nll op and by stage-level tests that recompute the
// loss outside the tape: identical code path, identical bits.
template <typename Real>
double nll_sum(const std::vector<Real>& logits, int n_rows, int n_cols,
               const std::vector<int>& rows, const std::vector<int>& targets) {
    double total = 0.0;
    for (size_t e = 0; e < rows.size(); ++e) {
        const Real* lr = logits.data() + (size_t)rows[e] * n_cols;
        double mx = lr[0];
        for (int j = 1; j < n_cols; ++j) mx = std::max(mx, (double)lr[j]);
        double z = 0.0;
        for (int j = 0; j < n_cols; ++j) z += std::exp((double)lr[j] - mx);
        total += (std::log(z) + mx) - (double)lr[targets[e]];
    }
    (void)n_rows;
    return total;
}

}  // namespace detail

template <typename Real>
class Graph {
public:
    struct OpRec {
        OpKind kind = OpKind::leaf;
        std::vector<int> in;
        int out = -1;
        OpAttrs attrs;
    };

    const TensorData<Real>& node(int id) const { return nodes_[(size_t)id]; }
    size_t size() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

    /* ---- construction ---------------------------------------------- */

    Tensor<Real> leaf(Shape shape, std::span<const Real> values, bool requires_grad) {
        check_rank2(shape, "leaf");
        if (values.size() != numel(shape))
            throw ShapeError("leaf: " + std::to_string(values.size()) + " values for shape " +
                             shape_str(shape));
        TensorData<Real> t;
        t.shape = std::move(shape);
        t.values.assign(values.begin(), values.end());
        t.requires_grad = requires_grad;
        return push(std::move(t), OpRec{OpKind::leaf, {}, -1, {}});
    }

    Tensor<Real> constant(Shape shape, std::span<const Real> values) {
        return leaf(std::move(shape), values, false);
    }

    Tensor<Real> zeros(Shape shape, bool requires_grad = false) {
        std::vector<Real> v(numel(shape), Real(0));
        return leaf(std::move(shape), v, requires_grad);
    }

    /* ---- ops --------------------------------------------------------- */

    Tensor<Real> matmul(Tensor<Real> a, Tensor<Real> b) {
        const auto& A = node(a.id);
        const auto& B = node(b.id);
        if (A.cols() != B.rows())
            throw ShapeError("matmul: " + shape_str(A.shape) + " x " + shape_str(B.shape));
        const int m = A.rows(), k = A.cols(), n = B.cols();
        TensorData<Real> out = blank({m, n}, A.requires_grad || B.requires_grad);
        detail::mm_acc64<Real, false>(A.values.data(), B.values.data(), out.values.data(),
                                      m, k, n, acc_scratch_);
        return push(std::move(out), OpRec{OpKind::matmul, {a.id, b.id}, -1, {}});
    }

    // Same-shape addition, or bias-row broadcast when b is [1, n]. The only
    // broadcast the engine supports.
    Tensor<Real> add(Tensor<Real> a, Tensor<Real> b) {
        const auto& A = node(a.id);
        const auto& B = node(b.id);
        const bool bias_row = B.rows() == 1 && A.rows() != 1;
        if (A.cols() != B.cols() || (!bias_row && A.rows() != B.rows()))
            throw ShapeError("add: " + shape_str(A.shape) + " + " + shape_str(B.shape));
        const int m = A.rows(), n = A.cols();
        TensorData<Real> out = blank({m, n}, A.requires_grad || B.requires_grad);
        for (int i = 0; i < m; ++i) {
            const Real* ar = A.values.data() + (size_t)i * n;
            const Real* br = B.values.data() + (bias_row ? 0 : (size_t)i * n);
            Real* cr = out.values.data() + (size_t)i * n;
            for (int j = 0; j < n; ++j) cr[j] = ar[j] + br[j];
        }
        return push(std::move(out), OpRec{OpKind::add, {a.id, b.id}, -1, {}});
    }

    Tensor<Real> scale(Tensor<Real> a, double s) {
        const auto& A = node(a.id);
        TensorData<Real> out = blank(A.shape, A.requires_grad);
        for (size_t i = 0; i < A.values.size(); ++i) out.values[i] = (Real)(s * (double)A.values[i]);
        OpRec rec{OpKind::scale, {a.id}, -1, {}};
        rec.attrs.scalar = s;
        return push(std::move(out), std::move(rec));
    }

    // Row-wise softmax with max subtraction; normalizer accumulated in double.
    Tensor<Real> softmax_rows(Tensor<Real> a) {
        const auto& A = node(a.id);
        const int m = A.rows(), n = A.cols();
        TensorData<Real> out = blank(A.shape, A.requires_grad);
        std::vector<Real> e((size_t)n);
        for (int i = 0; i < m; ++i) {
            const Real* x = A.values.data() + (size_t)i * n;
            Real mx = x[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
            double z = 0.0;
            for (int j = 0; j < n; ++j) {
                e[(size_t)j] = std::exp(x[j] - mx);
                z += (double)e[(size_t)j];
            }
            const double inv = 1.0 / z;
            Real* y = out.values.data() + (size_t)i * n;
            for (int j = 0; j < n; ++j) y[j] = (Real)((double)e[(size_t)j] * inv);
        }
        return push(std::move(out), OpRec{OpKind::softmax_rows, {a.id}, -1, {}});
    }

    // Per-row normalization to mean 0 / variance 1 (population variance,
    // eps 1e-5). No learned affine.
    Tensor<Real> layer_norm(Tensor<Real> a) {
        const auto& A = node(a.id);
        const int m = A.rows(), n = A.cols();
        TensorData<Real> out = blank(A.shape, A.requires_grad);
        for (int i = 0; i < m; ++i) {
            const Real* x = A.values.data() + (size_t)i * n;
            double mu = 0.0;
            for (int j = 0; j < n; ++j) mu += (double)x[j];
            mu /= n;
            double var = 0.0;
            for (int j = 0; j < n; ++j) {
                const double d = (double)x[j] - mu;
                var += d * d;
            }
            var /= n;
            const double rstd = 1.0 / std::sqrt(var + detail::kLayerNormEps);
            Real* y = out.values.data() + (size_t)i * n;
            for (int j = 0; j < n; ++j) y[j] = (Real)(((double)x[j] - mu) * rstd);
        }
        return push(std::move(out), OpRec{OpKind::layer_norm, {a.id}, -1, {}});
    }

    // Exact GELU: x * Phi(x) with Phi via erf.
    Tensor<Real> gelu(Tensor<Real> a) {
        const auto& A = node(a.id);
        TensorData<Real> out = blank(A.shape, A.requires_grad);
        for (size_t i = 0; i < A.values.size(); ++i) {
            const Real x = A.values[i];
            out.values[i] = x * Real(0.5) * (Real(1) + std::erf(x * Real(0.7071067811865476)));
        }
        return push(std::move(out), OpRec{OpKind::gelu, {a.id}, -1, {}});
    }

    Tensor<Real> embed_lookup(Tensor<Real> table, std::span<const int> ids) {
        const auto& T = node(table.id);
        const int v = T.rows(), d = T.cols();
        for (int id : ids)
            if (id < 0 || id >= v)
                throw ContractError("embed_lookup: id " + std::to_string(id) + " outside table " +
                                    shape_str(T.shape));
        if (ids.empty()) throw ContractError("embed_lookup: empty id list");
        TensorData<Real> out = blank({(int)ids.size(), d}, T.requires_grad);
        for (size_t t = 0; t < ids.size(); ++t)
            std::memcpy(out.values.data() + t * (size_t)d,
                        T.values.data() + (size_t)ids[t] * d, sizeof(Real) * (size_t)d);
        OpRec rec{OpKind::embed_lookup, {table.id}, -1, {}};
        rec.attrs.indices.assign(ids.begin(), ids.end());
        return push(std::move(out), std::move(rec));
    }

    Tensor<Real> concat_rows(std::span<const Tensor<Real>> parts) {
        if (parts.empty()) throw ContractError("concat_rows: no inputs");
        const int n = node(parts[0].id).cols();
        int rows = 0;
        bool rg = false;
        for (const auto& p : parts) {
            const auto& P = node(p.id);
            if (P.cols() != n)
                throw ShapeError("concat_rows: width mismatch " + shape_str(P.shape));
            rows += P.rows();
            rg = rg || P.requires_grad;
        }
        TensorData<Real> out = blank({rows, n}, rg);
        OpRec rec{OpKind::concat_rows, {}, -1, {}};
        size_t off = 0;
        for (const auto& p : parts) {
            const auto& P = node(p.id);
            std::memcpy(out.values.data() + off, P.values.data(), sizeof(Real) * P.values.size());
            off += P.values.size();
            rec.in.push_back(p.id);
        }
        return push(std::move(out), std::move(rec));
    }

    Tensor<Real> concat_rows(std::initializer_list<Tensor<Real>> parts) {
        std::vector<Tensor<Real>> v(parts);
        return concat_rows(std::span<const Tensor<Real>>(v));
    }

    Tensor<Real> slice_rows(Tensor<Real> a, int r0, int r1) {
        const auto& A = node(a.id);
        if (r0 < 0 || r1 <= r0 || r1 > A.rows())
            throw ContractError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                                ") of " + shape_str(A.shape));
        const int n = A.cols();
        TensorData<Real> out = blank({r1 - r0, n}, A.requires_grad);
        std::memcpy(out.values.data(), A.values.data() + (size_t)r0 * n,
                    sizeof(Real) * (size_t)(r1 - r0) * n);
        OpRec rec{OpKind::slice_rows, {a.id}, -1, {}};
        rec.attrs.r0 = r0;
        rec.attrs.r1 = r1;
        return push(std::move(out), std::move(rec));
    }

    Tensor<Real> transpose(Tensor<Real> a) {
        const auto& A = node(a.id);
        const int m = A.rows(), n = A.cols();
        TensorData<Real> out = blank({n, m}, A.requires_grad);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                out.values[(size_t)j * m + i] = A.values[(size_t)i * n + j];
        return push(std::move(out), OpRec{OpKind::transpose, {a.id}, -1, {}});
    }

    // Sum of -log softmax(logits[row])[target] over the (row, target) list.
    // Positions outside the list never influence the result; callers divide
    // by the supervised count themselves.
    Tensor<Real> masked_nll(Tensor<Real> logits, std::vector<int> rows, std::vector<int> targets) {
        const auto& L = node(logits.id);
        if (rows.size() != targets.size())
            throw ContractError("masked_nll: rows/targets length mismatch");
        for (size_t e = 0; e < rows.size(); ++e) {
            if (rows[e] < 0 || rows[e] >= L.rows())
                throw ContractError("masked_nll: row " + std::to_string(rows[e]) + " outside " +
                                    shape_str(L.shape));
            if (targets[e] < 0 || targets[e] >= L.cols())
                throw ContractError("masked_nll: target " + std::to_string(targets[e]) +
                                    " outside vocab " + std::to_string(L.cols()));
        }
        const double total = detail::nll_sum(L.values, L.rows(), L.cols(), rows, targets);
        TensorData<Real> out = blank({1, 1}, L.requires_grad);
        out.values[0] = (Real)total;
        OpRec rec{OpKind::masked_nll, {logits.id}, -1, {}};
        rec.attrs.indices = std::move(rows);
        rec.attrs.targets = std::move(targets);
        return push(std::move(out), std::move(rec));
    }

    // Generic entry point mirroring the op enum; thin dispatch onto the
    // typed methods above.
    Tensor<Real> apply(OpKind kind, std::span<const Tensor<Real>> in, const OpAttrs& attrs = {}) {
        switch (kind) {
            case OpKind::matmul: need(in, 2, kind); return matmul(in[0], in[1]);
            case OpKind::add: need(in, 2, kind); return add(in[0], in[1]);
            case OpKind::scale: need(in, 1, kind); return scale(in[0], attrs.scalar);
            case OpKind::softmax_rows: need(in, 1, kind); return softmax_rows(in[0]);
            case OpKind::layer_norm: need(in, 1, kind); return layer_norm(in[0]);
            case OpKind::gelu: need(in, 1, kind); return gelu(in[0]);
            case OpKind::embed_lookup: need(in, 1, kind); return embed_lookup(in[0], attrs.indices);
            case OpKind::concat_rows: return concat_rows(in);
            case OpKind::slice_rows: need(in, 1, kind); return slice_rows(in[0], attrs.r0, attrs.r1);
            case OpKind::transpose: need(in, 1, kind); return transpose(in[0]);
            case OpKind::masked_nll:
                need(in, 1, kind);
                return masked_nll(in[0], attrs.indices, attrs.targets);
            case OpKind::leaf: break;
        }
        throw ContractError(std::string("apply: not an applicable op: ") + op_name(kind));
    }

    /* ---- backward ---------------------------------------------------- */

    // Reverse sweep from a scalar loss. Fills .grad on every requires_grad
    // node; nodes not reachable from the loss get zeros. One sweep per graph.
    void backward(Tensor<Real> loss) {
        if (backward_done_) throw ContractError("backward: already ran on this graph");
        const auto& L = node(loss.id);
        if (numel(L.shape) != 1) throw ContractError("backward: loss must be scalar, got " +
                                                     shape_str(L.shape));
        if (!L.requires_grad)
            throw ContractError("backward: loss does not depend on any requires_grad tensor");
        backward_done_ = true;
        nodes_[(size_t)loss.id].grad.assign(1, Real(1));

        for (size_t oi = ops_.size(); oi-- > 0;) {
            const OpRec& op = ops_[oi];
            if (op.kind == OpKind::leaf) continue;
            TensorData<Real>& out = nodes_[(size_t)op.out];
            if (out.grad.empty() || !out.requires_grad) continue;
            backward_op(op, out);
        }
        for (auto& n : nodes_)
            if (n.requires_grad && n.grad.empty()) n.grad.assign(n.values.size(), Real(0));
    }

private:
    std::vector<TensorData<Real>> nodes_;
    std::vector<OpRec> ops_;
    std::vector<Real> scratch_;        // transpose staging for matmul gradients
    std::vector<double> acc_scratch_;  // 64-bit accumulator rows for matmul
    bool backward_done_ = false;

    static void check_rank2(const Shape& s, const char* what) {
        if (s.size() != 2 || s[0] <= 0 || s[1] <= 0)
            throw ShapeError(std::string(what) + ": expected positive 2-d shape, got " +
                             shape_str(s));
    }

    static void need(std::span<const Tensor<Real>> in, size_t n, OpKind k) {
        if (in.size() != n)
            throw ContractError(std::string("apply: ") + op_name(k) + " takes " +
                                std::to_string(n) + " inputs, got " + std::to_string(in.size()));
    }

    TensorData<Real> blank(Shape shape, bool rg) {
        check_rank2(shape, "op output");
        TensorData<Real> t;
        t.shape = std::move(shape);
        t.values.resize(numel(t.shape));
        t.requires_grad = rg;
        return t;
    }

    Tensor<Real> push(TensorData<Real> t, OpRec rec) {
        if (rec.kind != OpKind::leaf) {
            for (const Real v : t.values)
                if (!std::isfinite((double)v))
                    throw NumericError(std::string("non-finite value in output of ") +
                                       op_name(rec.kind));
        }
        const int id = (int)nodes_.size();
        nodes_.push_back(std::move(t));
        rec.out = id;
        ops_.push_back(std::move(rec));
        return Tensor<Real>{this, id};
    }

    std::vector<Real>& grad_buf(int id) {
        TensorData<Real>& n = nodes_[(size_t)id];
        if (n.grad.empty()) n.grad.assign(n.values.size(), Real(0));
        return n.grad;
    }

    void backward_op(const OpRec& op, TensorData<Real>& out) {
        switch (op.kind) {
            case OpKind::matmul: {
                const auto& A = nodes_[(size_t)op.in[0]];
                const auto& B = nodes_[(size_t)op.in[1]];
                const int m = A.rows(), k = A.cols(), n = B.cols();
                if (A.requires_grad) {
                    // dA += dC * B^T, via a materialized transpose so the
                    // tiled kernel's contiguous access applies
                    auto& da = grad_buf(op.in[0]);
                    scratch_.resize((size_t)k * n);
                    detail::transpose_copy(B.values.data(), k, n, scratch_.data());
                    detail::mm_acc64<Real, true>(out.grad.data(), scratch_.data(), da.data(),
                                                 m, n, k, acc_scratch_);
                }
                if (B.requires_grad) {
                    // dB += A^T * dC
                    auto& db = grad_buf(op.in[1]);
                    scratch_.resize((size_t)m * k);
                    detail::transpose_copy(A.values.data(), m, k, scratch_.data());
                    detail::mm_acc64<Real, true>(scratch_.data(), out.grad.data(), db.data(),
                                                 k, m, n, acc_scratch_);
                }
                break;
            }
            case OpKind::add: {
                const auto& A = nodes_[(size_t)op.in[0]];
                const auto& B = nodes_[(size_t)op.in[1]];
                const int m = A.rows(), n = A.cols();
                if (A.requires_grad) {
                    auto& da = grad_buf(op.in[0]);
                    for (size_t i = 0; i < da.size(); ++i) da[i] += out.grad[i];
                }
                if (B.requires_grad) {
                    auto& db = grad_buf(op.in[1]);
                    if (B.rows() == 1 && m != 1) {
                        for (int j = 0; j < n; ++j) {
                            double acc = 0.0;
                            for (int i = 0; i < m; ++i) acc += (double)out.grad[(size_t)i * n + j];
                            db[(size_t)j] += (Real)acc;
                        }
                    } else {
                        for (size_t i = 0; i < db.size(); ++i) db[i] += out.grad[i];
                    }
                }
                break;
            }
            case OpKind::scale: {
                if (!nodes_[(size_t)op.in[0]].requires_grad) break;
                auto& da = grad_buf(op.in[0]);
                for (size_t i = 0; i < da.size(); ++i)
                    da[i] += (Real)(op.attrs.scalar * (double)out.grad[i]);
                break;
            }
            case OpKind::softmax_rows: {
                if (!nodes_[(size_t)op.in[0]].requires_grad) break;
                auto& da = grad_buf(op.in[0]);
                const int m = out.rows(), n = out.cols();
                for (int i = 0; i < m; ++i) {
                    const Real* y = out.values.data() + (size_t)i * n;
                    const Real* g = out.grad.data() + (size_t)i * n;
                    double dot = 0.0;
                    for (int j = 0; j < n; ++j) dot += (double)g[j] * (double)y[j];
                    Real* d = da.data() + (size_t)i * n;
                    for (int j = 0; j < n; ++j)
                        d[j] += (Real)((double)y[j] * ((double)g[j] - dot));
                }
                break;
            }
            case OpKind::layer_norm: {
                const auto& A = nodes_[(size_t)op.in[0]];
                if (!A.requires_grad) break;
                auto& da = grad_buf(op.in[0]);
                const int m = A.rows(), n = A.cols();
                for (int i = 0; i < m; ++i) {
                    const Real* x = A.values.data() + (size_t)i * n;
                    const Real* xh = out.values.data() + (size_t)i * n;  // == x-hat
                    const Real* g = out.grad.data() + (size_t)i * n;
                    double mu = 0.0;
                    for (int j = 0; j < n; ++j) mu += (double)x[j];
                    mu /= n;
                    double var = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double d = (double)x[j] - mu;
                        var += d * d;
                    }
                    var /= n;
                    const double rstd = 1.0 / std::sqrt(var + detail::kLayerNormEps);
                    double gmean = 0.0, gxmean = 0.0;
                    for (int j = 0; j < n; ++j) {
                        gmean += (double)g[j];
                        gxmean += (double)g[j] * (double)xh[j];
                    }
                    gmean /= n;
                    gxmean /= n;
                    Real* d = da.data() + (size_t)i * n;
                    for (int j = 0; j < n; ++j)
                        d[j] += (Real)(rstd * ((double)g[j] - gmean - (double)xh[j] * gxmean));
                }
                break;
            }
            case OpKind::gelu: {
                const auto& A = nodes_[(size_t)op.in[0]];
                if (!A.requires_grad) break;
                auto& da = grad_buf(op.in[0]);
                for (size_t i = 0; i < da.size(); ++i) {
                    const Real x = A.values[i];
                    const Real phi = Real(0.5) * (Real(1) + std::erf(x * Real(0.7071067811865476)));
                    const Real pdf = std::exp(Real(-0.5) * x * x) * Real(0.3989422804014327);
                    da[i] += out.grad[i] * (phi + x * pdf);
                }
                break;
            }
            case OpKind::embed_lookup: {
                const auto& T = nodes_[(size_t)op.in[0]];
                if (!T.requires_grad) break;
                auto& dt = grad_buf(op.in[0]);
                const int d = T.cols();
                for (size_t t = 0; t < op.attrs.indices.size(); ++t) {
                    Real* dst = dt.data() + (size_t)op.attrs.indices[t] * d;
                    const Real* src = out.grad.data() + t * (size_t)d;
                    for (int j = 0; j < d; ++j) dst[j] += src[j];
                }
                break;
            }
            case OpKind::concat_rows: {
                size_t off = 0;
                for (int in_id : op.in) {
                    const auto& P = nodes_[(size_t)in_id];
                    if (P.requires_grad) {
                        auto& dp = grad_buf(in_id);
                        for (size_t i = 0; i < dp.size(); ++i) dp[i] += out.grad[off + i];
                    }
                    off += P.values.size();
                }
                break;
            }
            case OpKind::slice_rows: {
                const auto& A = nodes_[(size_t)op.in[0]];
                if (!A.requires_grad) break;
                auto& da = grad_buf(op.in[0]);
                const size_t n = (size_t)A.cols();
                const size_t base = (size_t)op.attrs.r0 * n;
                for (size_t i = 0; i < out.grad.size(); ++i) da[base + i] += out.grad[i];
                break;
            }
            case OpKind::transpose: {
                const auto& A = nodes_[(size_t)op.in[0]];
                if (!A.requires_grad) break;
                auto& da = grad_buf(op.in[0]);
                const int m = A.rows(), n = A.cols();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        da[(size_t)i * n + j] += out.grad[(size_t)j * m + i];
                break;
            }
            case OpKind::masked_nll: {
                const auto& L = nodes_[(size_t)op.in[0]];
                if (!L.requires_grad) break;
                auto& dl = grad_buf(op.in[0]);
                const int n = L.cols();
                const double go = out.grad[0];
                std::vector<double> p((size_t)n);
                for (size_t e = 0; e < op.attrs.indices.size(); ++e) {
                    const int r = op.attrs.indices[e];
                    const int t = op.attrs.targets[e];
                    const Real* lr = L.values.data() + (size_t)r * n;
                    double mx = lr[0];
                    for (int j = 1; j < n; ++j) mx = std::max(mx, (double)lr[j]);
                    double z = 0.0;
                    for (int j = 0; j < n; ++j) {
                        p[(size_t)j] = std::exp((double)lr[j] - mx);
                        z += p[(size_t)j];
                    }
                    Real* d = dl.data() + (size_t)r * n;
                    for (int j = 0; j < n; ++j) {
                        double grad = p[(size_t)j] / z;
                        if (j == t) grad -= 1.0;
                        d[j] += (Real)(go * grad);
                    }
                }
                break;
            }
            case OpKind::leaf:
                break;
        }
    }
};

}  // namespace mlr
