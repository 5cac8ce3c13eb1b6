#ifndef SEAFIELD_AUTODIFF_HPP
#define SEAFIELD_AUTODIFF_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "seafield/common.hpp"
#include "seafield/tensor.hpp"

namespace seafield::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

struct Node;
using Var = std::shared_ptr<Node>;

/// One node of the dynamically built computation graph. Values are plain
/// tensors; gradients are accumulated during the backward sweep.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;
    std::string name; // set for parameters only

    void ensure_grad() {
        if (grad.size() != value.size() || !grad.same_shape(value)) grad = Tensor(value.shape());
    }
    bool has_grad() const { return grad.size() == value.size() && grad.same_shape(value); }
};

/// Graph recording is on by default; evaluation paths disable it to skip
/// node bookkeeping entirely.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

inline Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

inline Var parameter(Tensor v, std::string name = "") {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->ensure_grad();
    n->name = std::move(name);
    return n;
}

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (grad_mode()) {
        bool need = false;
        for (const auto& p : parents) need = need || p->requires_grad;
        if (need) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backprop = std::move(fn);
        }
    }
    return n;
}

/// Reverse sweep from a scalar root. Gradients accumulate into every
/// reachable node that requires them (parameters keep theirs until the
/// caller clears them).
inline void backward(const Var& root) {
    SF_CHECK(root->value.size() == 1, "backward root must be scalar");
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& top = stack.back();
        Node* n = top.first;
        if (top.second < n->parents.size()) {
            Node* p = n->parents[top.second++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->has_grad()) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Shape helpers: tensors are treated as rank-4 with leading singleton axes.
// ---------------------------------------------------------------------------

namespace detail {

inline std::array<std::int64_t, 4> pad4(const std::vector<std::int64_t>& shape) {
    SF_CHECK(shape.size() <= 4, "rank > 4 unsupported");
    std::array<std::int64_t, 4> s{1, 1, 1, 1};
    const std::size_t off = 4 - shape.size();
    for (std::size_t i = 0; i < shape.size(); ++i) s[off + i] = shape[i];
    return s;
}

inline std::array<std::int64_t, 4> strides4(const std::array<std::int64_t, 4>& s) {
    return {s[1] * s[2] * s[3], s[2] * s[3], s[3], 1};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename Bwd>
Var unary_ew(const Var& a, Fwd fwd, Bwd bwd) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = fwd(a->value[i]);
    Var pa = a;
    return make_op(std::move(out), {a}, [pa, bwd](Node& n) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] * bwd(pa->value[i], n.value[i]);
    });
}

} // namespace detail

inline Var relu(const Var& a) {
    return detail::unary_ew(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& a) {
    return detail::unary_ew(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh_op(const Var& a) {
    return detail::unary_ew(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sin_op(const Var& a) {
    return detail::unary_ew(
        a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

inline Var abs_op(const Var& a) {
    return detail::unary_ew(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var add(const Var& a, const Var& b) {
    SF_CHECK(a->value.same_shape(b->value), "add: shape mismatch " + a->value.shape_str() +
                                                " vs " + b->value.shape_str());
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    Var pa = a, pb = b;
    return make_op(std::move(out), {a, b}, [pa, pb](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    SF_CHECK(a->value.same_shape(b->value), "sub: shape mismatch");
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    Var pa = a, pb = b;
    return make_op(std::move(out), {a, b}, [pa, pb](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    SF_CHECK(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    Var pa = a, pb = b;
    return make_op(std::move(out), {a, b}, [pa, pb](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
        }
    });
}

inline Var mul_scalar(const Var& a, double s) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
    Var pa = a;
    return make_op(std::move(out), {a}, [pa, s](Node& n) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * s;
    });
}

inline Var add_scalar(const Var& a, double s) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + s;
    Var pa = a;
    return make_op(std::move(out), {a}, [pa](Node& n) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    });
}

/// y = scale * x + shift (scalar affine map, e.g. denormalization).
inline Var affine_scalar(const Var& a, double scale, double shift) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * scale + shift;
    Var pa = a;
    return make_op(std::move(out), {a}, [pa, scale](Node& n) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * scale;
    });
}

inline Var one_minus(const Var& a) { return add_scalar(mul_scalar(a, -1.0), 1.0); }

// ---------------------------------------------------------------------------
// Shape operations
// ---------------------------------------------------------------------------

inline Var reshape(const Var& a, std::vector<std::int64_t> shape) {
    Tensor out = a->value.reshaped(std::move(shape));
    Var pa = a;
    return make_op(std::move(out), {a}, [pa](Node& n) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    });
}

inline Var slice(const Var& a, int axis, std::int64_t start, std::int64_t len) {
    const int rank = a->value.rank();
    SF_CHECK(axis >= 0 && axis < rank, "slice: bad axis");
    SF_CHECK(start >= 0 && len >= 0 && start + len <= a->value.dim(axis), "slice: out of range");
    std::vector<std::int64_t> oshape = a->value.shape();
    oshape[static_cast<std::size_t>(axis)] = len;
    const auto in4 = detail::pad4(a->value.shape());
    const auto out4 = detail::pad4(oshape);
    const auto ist = detail::strides4(in4);
    const int ax4 = axis + (4 - rank);

    Tensor out(oshape);
    std::int64_t idx = 0;
    for (std::int64_t i0 = 0; i0 < out4[0]; ++i0)
        for (std::int64_t i1 = 0; i1 < out4[1]; ++i1)
            for (std::int64_t i2 = 0; i2 < out4[2]; ++i2)
                for (std::int64_t i3 = 0; i3 < out4[3]; ++i3) {
                    std::array<std::int64_t, 4> c{i0, i1, i2, i3};
                    c[static_cast<std::size_t>(ax4)] += start;
                    out[idx++] = a->value[c[0] * ist[0] + c[1] * ist[1] + c[2] * ist[2] + c[3]];
                }
    Var pa = a;
    return make_op(std::move(out), {a}, [pa, out4, ist, ax4, start](Node& n) {
        pa->ensure_grad();
        std::int64_t k = 0;
        for (std::int64_t i0 = 0; i0 < out4[0]; ++i0)
            for (std::int64_t i1 = 0; i1 < out4[1]; ++i1)
                for (std::int64_t i2 = 0; i2 < out4[2]; ++i2)
                    for (std::int64_t i3 = 0; i3 < out4[3]; ++i3) {
                        std::array<std::int64_t, 4> c{i0, i1, i2, i3};
                        c[static_cast<std::size_t>(ax4)] += start;
                        pa->grad[c[0] * ist[0] + c[1] * ist[1] + c[2] * ist[2] + c[3]] +=
                            n.grad[k++];
                    }
    });
}

inline Var concat(const std::vector<Var>& parts, int axis) {
    SF_CHECK(!parts.empty(), "concat: no inputs");
    const int rank = parts[0]->value.rank();
    SF_CHECK(axis >= 0 && axis < rank, "concat: bad axis");
    std::vector<std::int64_t> oshape = parts[0]->value.shape();
    std::int64_t total = 0;
    for (const auto& p : parts) {
        SF_CHECK(p->value.rank() == rank, "concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis)
                SF_CHECK(p->value.dim(d) == oshape[static_cast<std::size_t>(d)],
                         "concat: shape mismatch off axis");
        total += p->value.dim(axis);
    }
    oshape[static_cast<std::size_t>(axis)] = total;

    const auto out4 = detail::pad4(oshape);
    const auto ost = detail::strides4(out4);
    const int ax4 = axis + (4 - rank);

    Tensor out(oshape);
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const auto in4 = detail::pad4(p->value.shape());
        std::int64_t idx = 0;
        for (std::int64_t i0 = 0; i0 < in4[0]; ++i0)
            for (std::int64_t i1 = 0; i1 < in4[1]; ++i1)
                for (std::int64_t i2 = 0; i2 < in4[2]; ++i2)
                    for (std::int64_t i3 = 0; i3 < in4[3]; ++i3) {
                        std::array<std::int64_t, 4> c{i0, i1, i2, i3};
                        c[static_cast<std::size_t>(ax4)] += off;
                        out[c[0] * ost[0] + c[1] * ost[1] + c[2] * ost[2] + c[3]] =
                            p->value[idx++];
                    }
        off += p->value.dim(axis);
    }

    std::vector<Var> parents = parts;
    return make_op(std::move(out), parts, [parents, offsets, ost, ax4](Node& n) {
        for (std::size_t pi = 0; pi < parents.size(); ++pi) {
            const auto& p = parents[pi];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            const auto in4 = detail::pad4(p->value.shape());
            std::int64_t idx = 0;
            for (std::int64_t i0 = 0; i0 < in4[0]; ++i0)
                for (std::int64_t i1 = 0; i1 < in4[1]; ++i1)
                    for (std::int64_t i2 = 0; i2 < in4[2]; ++i2)
                        for (std::int64_t i3 = 0; i3 < in4[3]; ++i3) {
                            std::array<std::int64_t, 4> c{i0, i1, i2, i3};
                            c[static_cast<std::size_t>(ax4)] += offsets[pi];
                            p->grad[idx++] +=
                                n.grad[c[0] * ost[0] + c[1] * ost[1] + c[2] * ost[2] + c[3]];
                        }
        }
    });
}

inline Var permute(const Var& a, const std::array<int, 4>& perm) {
    SF_CHECK(a->value.rank() == 4, "permute expects rank 4");
    const auto in = detail::pad4(a->value.shape());
    std::vector<std::int64_t> oshape(4);
    for (int d = 0; d < 4; ++d) oshape[static_cast<std::size_t>(d)] = in[perm[d]];
    const auto ist = detail::strides4(in);

    Tensor out(oshape);
    std::int64_t idx = 0;
    std::array<std::int64_t, 4> o{};
    for (o[0] = 0; o[0] < oshape[0]; ++o[0])
        for (o[1] = 0; o[1] < oshape[1]; ++o[1])
            for (o[2] = 0; o[2] < oshape[2]; ++o[2])
                for (o[3] = 0; o[3] < oshape[3]; ++o[3]) {
                    std::int64_t src = 0;
                    for (int d = 0; d < 4; ++d) src += o[d] * ist[perm[d]];
                    out[idx++] = a->value[src];
                }
    Var pa = a;
    auto osh = oshape;
    return make_op(std::move(out), {a}, [pa, perm, osh, ist](Node& n) {
        pa->ensure_grad();
        std::int64_t k = 0;
        std::array<std::int64_t, 4> o{};
        for (o[0] = 0; o[0] < osh[0]; ++o[0])
            for (o[1] = 0; o[1] < osh[1]; ++o[1])
                for (o[2] = 0; o[2] < osh[2]; ++o[2])
                    for (o[3] = 0; o[3] < osh[3]; ++o[3]) {
                        std::int64_t src = 0;
                        for (int d = 0; d < 4; ++d) src += o[d] * ist[perm[d]];
                        pa->grad[src] += n.grad[k++];
                    }
    });
}

/// Zero-pad the last (time) axis on the left.
inline Var pad_last_left(const Var& a, std::int64_t pad) {
    SF_CHECK(pad >= 0, "negative pad");
    if (pad == 0) return a;
    const int rank = a->value.rank();
    std::vector<std::int64_t> oshape = a->value.shape();
    oshape[static_cast<std::size_t>(rank - 1)] += pad;
    const std::int64_t lin = a->value.dim(rank - 1);
    const std::int64_t lout = lin + pad;
    const std::int64_t rows = a->value.size() / lin;

    Tensor out(oshape);
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t l = 0; l < lin; ++l) out[r * lout + pad + l] = a->value[r * lin + l];
    Var pa = a;
    return make_op(std::move(out), {a}, [pa, rows, lin, lout, pad](Node& n) {
        pa->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t l = 0; l < lin; ++l)
                pa->grad[r * lin + l] += n.grad[r * lout + pad + l];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// C = A * B or A * B^T for 2-D operands.
inline Var matmul(const Var& a, const Var& b, bool transpose_b = false) {
    SF_CHECK(a->value.rank() == 2 && b->value.rank() == 2, "matmul expects matrices");
    const std::int64_t m = a->value.dim(0);
    const std::int64_t k = a->value.dim(1);
    const std::int64_t n = transpose_b ? b->value.dim(0) : b->value.dim(1);
    SF_CHECK((transpose_b ? b->value.dim(1) : b->value.dim(0)) == k, "matmul: inner dim mismatch");

    Tensor out({m, n});
    {
        CMatMap ma(a->value.data(), m, k);
        MatMap mo(out.data(), m, n);
        if (transpose_b) {
            CMatMap mb(b->value.data(), n, k);
            mo.noalias() = ma * mb.transpose();
        } else {
            CMatMap mb(b->value.data(), k, n);
            mo.noalias() = ma * mb;
        }
    }
    Var pa = a, pb = b;
    return make_op(std::move(out), {a, b}, [pa, pb, m, k, n, transpose_b](Node& nd) {
        CMatMap g(nd.grad.data(), m, n);
        if (pa->requires_grad) {
            pa->ensure_grad();
            MatMap ga(pa->grad.data(), m, k);
            if (transpose_b) {
                CMatMap mb(pb->value.data(), n, k);
                ga.noalias() += g * mb;
            } else {
                CMatMap mb(pb->value.data(), k, n);
                ga.noalias() += g * mb.transpose();
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            CMatMap ma(pa->value.data(), m, k);
            if (transpose_b) {
                MatMap gb(pb->grad.data(), n, k);
                gb.noalias() += g.transpose() * ma;
            } else {
                MatMap gb(pb->grad.data(), k, n);
                gb.noalias() += ma.transpose() * g;
            }
        }
    });
}

inline Var transpose2d(const Var& a) {
    SF_CHECK(a->value.rank() == 2, "transpose2d expects a matrix");
    const std::int64_t m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({n, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.at(j, i) = a->value.at(i, j);
    Var pa = a;
    return make_op(std::move(out), {a}, [pa, m, n](Node& nd) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) pa->grad[i * n + j] += nd.grad[j * m + i];
    });
}

/// y = x + row-broadcast bias: x is {R, C}, b is {C}.
inline Var add_rowvec(const Var& x, const Var& b) {
    SF_CHECK(x->value.rank() == 2 && b->value.rank() == 1 && x->value.dim(1) == b->value.dim(0),
             "add_rowvec: shape mismatch");
    const std::int64_t r = x->value.dim(0), c = x->value.dim(1);
    Tensor out({r, c});
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out.at(i, j) = x->value.at(i, j) + b->value[j];
    Var px = x, pb = b;
    return make_op(std::move(out), {x, b}, [px, pb, r, c](Node& nd) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::int64_t i = 0; i < r * c; ++i) px->grad[i] += nd.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) pb->grad[j] += nd.grad[i * c + j];
        }
    });
}

/// out[r, :] = x[index[r], :] — row gather with scatter-add backward.
inline Var gather_rows(const Var& x, std::vector<std::int64_t> index) {
    SF_CHECK(x->value.rank() == 2, "gather_rows expects a matrix");
    const std::int64_t u = x->value.dim(0), m = x->value.dim(1);
    const std::int64_t r = static_cast<std::int64_t>(index.size());
    Tensor out({r, m});
    for (std::int64_t i = 0; i < r; ++i) {
        const std::int64_t src = index[static_cast<std::size_t>(i)];
        SF_CHECK(src >= 0 && src < u, "gather_rows: index out of range");
        for (std::int64_t j = 0; j < m; ++j) out.at(i, j) = x->value.at(src, j);
    }
    Var px = x;
    auto idx = std::move(index);
    return make_op(std::move(out), {x}, [px, idx, m](Node& nd) {
        px->ensure_grad();
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(idx.size()); ++i) {
            const std::int64_t dst = idx[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < m; ++j) px->grad[dst * m + j] += nd.grad[i * m + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Convolutions over the time axis of {B, C, N, L} tensors
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const Tensor& x, std::int64_t kern, std::int64_t dil, Tensor& col) {
    const std::int64_t b = x.dim(0), cin = x.dim(1), nn = x.dim(2), l = x.dim(3);
    const std::int64_t lo = l - (kern - 1) * dil;
    // col is {cin*kern, b*nn*lo}
    const std::int64_t cols = b * nn * lo;
    for (std::int64_t ci = 0; ci < cin; ++ci)
        for (std::int64_t kk = 0; kk < kern; ++kk) {
            double* dst = col.data() + (ci * kern + kk) * cols;
            for (std::int64_t bb = 0; bb < b; ++bb)
                for (std::int64_t n = 0; n < nn; ++n) {
                    const double* src = x.data() + ((bb * cin + ci) * nn + n) * l + kk * dil;
                    double* d = dst + (bb * nn + n) * lo;
                    for (std::int64_t o = 0; o < lo; ++o) d[o] = src[o];
                }
        }
}

} // namespace detail

/// Valid (unpadded) 1-D convolution along the last axis, shared across the
/// node axis. x: {B,Cin,N,L}, w: {Cout,Cin,K}, optional bias {Cout};
/// output {B,Cout,N,L-(K-1)*dilation}.
inline Var conv_temporal(const Var& x, const Var& w, const Var& bias, std::int64_t dilation = 1) {
    SF_CHECK(x->value.rank() == 4 && w->value.rank() == 3, "conv_temporal: bad ranks");
    const std::int64_t b = x->value.dim(0), cin = x->value.dim(1), nn = x->value.dim(2),
                       l = x->value.dim(3);
    const std::int64_t cout = w->value.dim(0), kern = w->value.dim(2);
    SF_CHECK(w->value.dim(1) == cin, "conv_temporal: channel mismatch");
    SF_CHECK(dilation >= 1, "conv_temporal: bad dilation");
    const std::int64_t lo = l - (kern - 1) * dilation;
    SF_CHECK(lo >= 1, "conv_temporal: window shorter than receptive field");
    if (bias) SF_CHECK(bias->value.rank() == 1 && bias->value.dim(0) == cout, "bias shape");

    const std::int64_t cols = b * nn * lo;
    Tensor col({cin * kern, cols});
    detail::im2col(x->value, kern, dilation, col);

    Tensor ymat({cout, cols});
    {
        CMatMap mw(w->value.data(), cout, cin * kern);
        CMatMap mc(col.data(), cin * kern, cols);
        MatMap my(ymat.data(), cout, cols);
        my.noalias() = mw * mc;
    }
    Tensor out({b, cout, nn, lo});
    for (std::int64_t bb = 0; bb < b; ++bb)
        for (std::int64_t co = 0; co < cout; ++co) {
            const double bv = bias ? bias->value[co] : 0.0;
            for (std::int64_t n = 0; n < nn; ++n) {
                const double* src = ymat.data() + co * cols + (bb * nn + n) * lo;
                double* dst = out.data() + ((bb * cout + co) * nn + n) * lo;
                for (std::int64_t o = 0; o < lo; ++o) dst[o] = src[o] + bv;
            }
        }

    Var px = x, pw = w, pb = bias;
    std::vector<Var> parents = bias ? std::vector<Var>{x, w, bias} : std::vector<Var>{x, w};
    return make_op(std::move(out), std::move(parents),
                   [px, pw, pb, b, cin, nn, l, cout, kern, dilation, lo, cols](Node& nd) {
        // Gather output grad back into {cout, cols} layout.
        Tensor gmat({cout, cols});
        for (std::int64_t bb = 0; bb < b; ++bb)
            for (std::int64_t co = 0; co < cout; ++co)
                for (std::int64_t n = 0; n < nn; ++n) {
                    const double* src = nd.grad.data() + ((bb * cout + co) * nn + n) * lo;
                    double* dst = gmat.data() + co * cols + (bb * nn + n) * lo;
                    for (std::int64_t o = 0; o < lo; ++o) dst[o] = src[o];
                }

        if (pb && pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t co = 0; co < cout; ++co) {
                double s = 0.0;
                const double* g = gmat.data() + co * cols;
                for (std::int64_t i = 0; i < cols; ++i) s += g[i];
                pb->grad[co] += s;
            }
        }
        if (pw->requires_grad) {
            // Recompute col: trades flops for graph memory.
            Tensor col2({cin * kern, cols});
            detail::im2col(px->value, kern, dilation, col2);
            pw->ensure_grad();
            CMatMap mg(gmat.data(), cout, cols);
            CMatMap mc(col2.data(), cin * kern, cols);
            MatMap mw(pw->grad.data(), cout, cin * kern);
            mw.noalias() += mg * mc.transpose();
        }
        if (px->requires_grad) {
            px->ensure_grad();
            Tensor dcol({cin * kern, cols});
            {
                CMatMap mw(pw->value.data(), cout, cin * kern);
                CMatMap mg(gmat.data(), cout, cols);
                MatMap md(dcol.data(), cin * kern, cols);
                md.noalias() = mw.transpose() * mg;
            }
            for (std::int64_t ci = 0; ci < cin; ++ci)
                for (std::int64_t kk = 0; kk < kern; ++kk) {
                    const double* src = dcol.data() + (ci * kern + kk) * cols;
                    for (std::int64_t bb = 0; bb < b; ++bb)
                        for (std::int64_t n = 0; n < nn; ++n) {
                            double* dst =
                                px->grad.data() + ((bb * cin + ci) * nn + n) * l + kk * dilation;
                            const double* s = src + (bb * nn + n) * lo;
                            for (std::int64_t o = 0; o < lo; ++o) dst[o] += s[o];
                        }
                }
        }
    });
}

// ---------------------------------------------------------------------------
// Graph mixing: out[b,c,i,l] = sum_j A[i,j] * h[b,c,j,l]
// ---------------------------------------------------------------------------

inline Var node_mix(const Var& h, const Var& a) {
    SF_CHECK(h->value.rank() == 4 && a->value.rank() == 2, "node_mix: bad ranks");
    const std::int64_t b = h->value.dim(0), c = h->value.dim(1), nn = h->value.dim(2),
                       l = h->value.dim(3);
    SF_CHECK(a->value.dim(0) == nn && a->value.dim(1) == nn, "node_mix: adjacency shape");

    Tensor out({b, c, nn, l});
    {
        CMatMap ma(a->value.data(), nn, nn);
        for (std::int64_t bc = 0; bc < b * c; ++bc) {
            CMatMap mh(h->value.data() + bc * nn * l, nn, l);
            MatMap mo(out.data() + bc * nn * l, nn, l);
            mo.noalias() = ma * mh;
        }
    }
    Var ph = h, pa = a;
    return make_op(std::move(out), {h, a}, [ph, pa, b, c, nn, l](Node& nd) {
        if (ph->requires_grad) {
            ph->ensure_grad();
            CMatMap ma(pa->value.data(), nn, nn);
            for (std::int64_t bc = 0; bc < b * c; ++bc) {
                CMatMap mg(nd.grad.data() + bc * nn * l, nn, l);
                MatMap mh(ph->grad.data() + bc * nn * l, nn, l);
                mh.noalias() += ma.transpose() * mg;
            }
        }
        if (pa->requires_grad) {
            pa->ensure_grad();
            MatMap mga(pa->grad.data(), nn, nn);
            for (std::int64_t bc = 0; bc < b * c; ++bc) {
                CMatMap mg(nd.grad.data() + bc * nn * l, nn, l);
                CMatMap mh(ph->value.data() + bc * nn * l, nn, l);
                mga.noalias() += mg * mh.transpose();
            }
        }
    });
}

/// Row-normalized adjacency with self-loops: out[i,j] = (A+I)[i,j] / sum_k (A+I)[i,k].
inline Var row_normalize_self_loops(const Var& a) {
    SF_CHECK(a->value.rank() == 2 && a->value.dim(0) == a->value.dim(1),
             "row_normalize: square matrix expected");
    const std::int64_t n = a->value.dim(0);
    Tensor s({n, n});
    std::vector<double> rowsum(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            s.at(i, j) = a->value.at(i, j) + (i == j ? 1.0 : 0.0);
            rowsum[static_cast<std::size_t>(i)] += s.at(i, j);
        }
        SF_CHECK(rowsum[static_cast<std::size_t>(i)] > 0.0, "row sum must be positive");
    }
    Tensor out({n, n});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = s.at(i, j) / rowsum[static_cast<std::size_t>(i)];

    Var pa = a;
    Tensor snap = s;
    return make_op(std::move(out), {a}, [pa, snap, rowsum, n](Node& nd) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const double r = rowsum[static_cast<std::size_t>(i)];
            double dot = 0.0;
            for (std::int64_t k = 0; k < n; ++k) dot += nd.grad.at(i, k) * snap.at(i, k);
            for (std::int64_t j = 0; j < n; ++j)
                pa->grad[i * n + j] += nd.grad.at(i, j) / r - dot / (r * r);
        }
    });
}

// ---------------------------------------------------------------------------
// Batch normalization over channels of {B, C, N, L}
// ---------------------------------------------------------------------------

struct BatchNormState {
    Tensor running_mean; // {C}
    Tensor running_var;  // {C}
};

inline Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                     bool training, double momentum = 0.1, double eps = 1e-5) {
    SF_CHECK(x->value.rank() == 4, "batchnorm expects {B,C,N,L}");
    const std::int64_t b = x->value.dim(0), c = x->value.dim(1), nn = x->value.dim(2),
                       l = x->value.dim(3);
    SF_CHECK(gamma->value.dim(0) == c && beta->value.dim(0) == c, "batchnorm: channel mismatch");
    SF_CHECK(state.running_mean.size() == c && state.running_var.size() == c,
             "batchnorm: uninitialized state");
    const std::int64_t m = b * nn * l;

    Tensor mean({c}), var({c});
    if (training) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            for (std::int64_t bb = 0; bb < b; ++bb) {
                const double* p = x->value.data() + ((bb * c + ch) * nn) * l;
                for (std::int64_t i = 0; i < nn * l; ++i) sum += p[i];
            }
            mean[ch] = sum / static_cast<double>(m);
            double ss = 0.0;
            for (std::int64_t bb = 0; bb < b; ++bb) {
                const double* p = x->value.data() + ((bb * c + ch) * nn) * l;
                for (std::int64_t i = 0; i < nn * l; ++i) {
                    const double d = p[i] - mean[ch];
                    ss += d * d;
                }
            }
            var[ch] = ss / static_cast<double>(m);
            state.running_mean[ch] = (1.0 - momentum) * state.running_mean[ch] + momentum * mean[ch];
            state.running_var[ch] = (1.0 - momentum) * state.running_var[ch] + momentum * var[ch];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    Tensor invstd({c});
    for (std::int64_t ch = 0; ch < c; ++ch) invstd[ch] = 1.0 / std::sqrt(var[ch] + eps);

    Tensor xhat({b, c, nn, l});
    Tensor out({b, c, nn, l});
    for (std::int64_t bb = 0; bb < b; ++bb)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* p = x->value.data() + ((bb * c + ch) * nn) * l;
            double* ph = xhat.data() + ((bb * c + ch) * nn) * l;
            double* po = out.data() + ((bb * c + ch) * nn) * l;
            const double g = gamma->value[ch], be = beta->value[ch], mu = mean[ch],
                         is = invstd[ch];
            for (std::int64_t i = 0; i < nn * l; ++i) {
                ph[i] = (p[i] - mu) * is;
                po[i] = g * ph[i] + be;
            }
        }

    Var px = x, pg = gamma, pb = beta;
    return make_op(std::move(out), {x, gamma, beta},
                   [px, pg, pb, xhat, invstd, training, b, c, nn, l, m](Node& nd) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::int64_t bb = 0; bb < b; ++bb) {
                const double* g = nd.grad.data() + ((bb * c + ch) * nn) * l;
                const double* h = xhat.data() + ((bb * c + ch) * nn) * l;
                for (std::int64_t i = 0; i < nn * l; ++i) {
                    sum_dy += g[i];
                    sum_dy_xhat += g[i] * h[i];
                }
            }
            if (pg->requires_grad) {
                pg->ensure_grad();
                pg->grad[ch] += sum_dy_xhat;
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                pb->grad[ch] += sum_dy;
            }
            if (px->requires_grad) {
                px->ensure_grad();
                const double gm = pg->value[ch], is = invstd[ch];
                const double md = static_cast<double>(m);
                for (std::int64_t bb = 0; bb < b; ++bb) {
                    const double* g = nd.grad.data() + ((bb * c + ch) * nn) * l;
                    const double* h = xhat.data() + ((bb * c + ch) * nn) * l;
                    double* dx = px->grad.data() + ((bb * c + ch) * nn) * l;
                    if (training) {
                        for (std::int64_t i = 0; i < nn * l; ++i)
                            dx[i] += gm * is / md * (md * g[i] - sum_dy - h[i] * sum_dy_xhat);
                    } else {
                        for (std::int64_t i = 0; i < nn * l; ++i) dx[i] += gm * is * g[i];
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& a) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    Var pa = a;
    return make_op(Tensor::scalar(s), {a}, [pa](Node& n) {
        pa->ensure_grad();
        const double g = n.grad[0];
        for (std::int64_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
    });
}

inline Var mean_all(const Var& a) {
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

/// Mean absolute error over cells where mask is 1; other cells are
/// ignored entirely. Throws when no cell is observed.
inline Var masked_mae(const Var& pred, const Tensor& target, const Tensor& mask) {
    SF_CHECK(pred->value.same_shape(target) && pred->value.same_shape(mask),
             "masked_mae: shape mismatch");
    double count = 0.0, sum = 0.0;
    for (std::int64_t i = 0; i < mask.size(); ++i)
        if (mask[i] != 0.0) {
            count += 1.0;
            sum += std::abs(pred->value[i] - target[i]);
        }
    if (count == 0.0) throw DegenerateInputError("masked_mae: no observed cells");
    Var pp = pred;
    return make_op(Tensor::scalar(sum / count), {pred}, [pp, target, mask, count](Node& n) {
        pp->ensure_grad();
        const double g = n.grad[0] / count;
        for (std::int64_t i = 0; i < mask.size(); ++i)
            if (mask[i] != 0.0) {
                const double d = pp->value[i] - target[i];
                pp->grad[i] += g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            }
    });
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers
// ---------------------------------------------------------------------------

/// 0/1 mask keeping the k largest entries of each row (ties broken toward
/// the lower column index).
inline Tensor topk_row_mask(const Tensor& a, std::int64_t k) {
    SF_CHECK(a.rank() == 2, "topk_row_mask expects a matrix");
    const std::int64_t n = a.dim(0), m = a.dim(1);
    SF_CHECK(k >= 1 && k <= m, "topk_row_mask: k out of range");
    Tensor mask({n, m});
    std::vector<std::int64_t> idx(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < m; ++j) idx[static_cast<std::size_t>(j)] = j;
        std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t x, std::int64_t y) {
            return a.at(i, x) > a.at(i, y);
        });
        for (std::int64_t j = 0; j < k; ++j) mask.at(i, idx[static_cast<std::size_t>(j)]) = 1.0;
    }
    return mask;
}

inline void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) {
        p->ensure_grad();
        p->grad.fill(0.0);
    }
}

} // namespace seafield::ad

#endif // SEAFIELD_AUTODIFF_HPP
