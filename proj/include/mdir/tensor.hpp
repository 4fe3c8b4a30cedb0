#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mdir/parallel.hpp"
#include "mdir/rng.hpp"

namespace mdir {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + "]";
}

// Thrown when training arithmetic produces NaN/Inf; the CLI maps it to a
// dedicated exit code.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

inline thread_local bool t_grad_enabled = true;

}  // namespace detail

struct NoGradGuard {
    NoGradGuard() : prev_(detail::t_grad_enabled) { detail::t_grad_enabled = false; }
    ~NoGradGuard() { detail::t_grad_enabled = prev_; }
    bool prev_;
};

inline bool grad_enabled() { return detail::t_grad_enabled; }

// Dense row-major tensor handle. Copies share the underlying node, which also
// carries the autodiff graph edges; a graph must be built and consumed by one
// logical thread.
template <class T>
class TensorT {
public:
    using Scalar = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    TensorT() = default;
    explicit TensorT(NodePtr n) : node_(std::move(n)) {}

    static TensorT zeros(Shape shape) { return full(std::move(shape), T(0)); }

    static TensorT full(Shape shape, T v) {
        auto n = std::make_shared<detail::Node<T>>();
        n->value.assign(static_cast<std::size_t>(shape_numel(shape)), v);
        n->shape = std::move(shape);
        return TensorT(std::move(n));
    }

    static TensorT from_vector(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("from_vector: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return TensorT(std::move(n));
    }

    static TensorT rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.node_->value) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    static TensorT rand_normal(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.node_->value) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return node_->numel(); }

    const T* data() const { return node_->value.data(); }
    T* data() { return node_->value.data(); }
    const std::vector<T>& values() const { return node_->value; }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar, shape " + shape_str(shape()));
        return node_->value[0];
    }

    T at(std::initializer_list<std::int64_t> idx) const {
        std::int64_t flat = 0;
        std::size_t k = 0;
        for (auto i : idx) {
            flat = flat * node_->shape[k] + i;
            ++k;
        }
        return node_->value[static_cast<std::size_t>(flat)];
    }

    bool requires_grad() const { return node_->requires_grad; }
    TensorT& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return defined() && !node_->grad.empty(); }
    const std::vector<T>& grad() const { return node_->grad; }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
    void drop_grad() { node_->grad.clear(); }

    const std::string& name() const { return node_->name; }
    void set_name(std::string n) { node_->name = std::move(n); }

    NodePtr node() const { return node_; }

    // Value copy detached from any graph.
    TensorT detached_copy() const {
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = node_->shape;
        n->value = node_->value;
        return TensorT(std::move(n));
    }

    template <class U>
    TensorT<U> cast() const {
        std::vector<U> out(node_->value.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(node_->value[i]);
        return TensorT<U>::from_vector(node_->shape, std::move(out));
    }

    bool all_finite() const {
        for (T v : node_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Reverse-mode sweep from a scalar root. Accumulates into .grad of every
    // reachable node with requires_grad set.
    void backward() const {
        if (numel() != 1)
            throw std::invalid_argument("backward: root must be scalar, shape " + shape_str(shape()));
        std::vector<detail::Node<T>*> order;
        topo_sort(order);
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node<T>* n = *it;
            if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
        }
    }

private:
    void topo_sort(std::vector<detail::Node<T>*>& order) const {
        std::unordered_set<detail::Node<T>*> seen;
        std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, i] = stack.back();
            if (i < n->parents.size()) {
                detail::Node<T>* p = n->parents[i].get();
                ++i;
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    NodePtr node_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// ---------------------------------------------------------------------------
// op plumbing

namespace detail {

template <class T>
std::shared_ptr<Node<T>> make_result(Shape shape, std::vector<std::shared_ptr<Node<T>>> parents) {
    auto n = std::make_shared<Node<T>>();
    n->value.resize(static_cast<std::size_t>(shape_numel(shape)));
    n->shape = std::move(shape);
    if (t_grad_enabled) {
        for (const auto& p : parents)
            if (p->requires_grad) {
                n->requires_grad = true;
                break;
            }
        if (n->requires_grad) n->parents = std::move(parents);
    }
    return n;
}

template <class T>
void accum(Node<T>& dst, const std::vector<T>& g) {
    dst.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

// C[M,N] (+)= op(A) * op(B), row-major contiguous buffers. Partitioned over
// fixed 16-row blocks of C so results are independent of the thread count.
template <class T, class AMap, class BMap>
void gemm_blocked(const AMap& A, const BMap& B, T* C, std::int64_t M, std::int64_t N, bool accumulate) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    parallel_blocks(M, 16, [&](std::int64_t r0, std::int64_t r1) {
        Eigen::Map<Mat> Cb(C + r0 * N, r1 - r0, N);
        if (accumulate)
            Cb.noalias() += A.middleRows(r0, r1 - r0) * B;
        else
            Cb.noalias() = A.middleRows(r0, r1 - r0) * B;
    });
}

template <class T>
void gemm_nn(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N,
             bool accumulate = false) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> Am(A, M, K), Bm(B, K, N);
    gemm_blocked<T>(Am, Bm, C, M, N, accumulate);
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N,
             bool accumulate = false) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> Am(A, M, K), Bm(B, N, K);
    gemm_blocked<T>(Am, Bm.transpose(), C, M, N, accumulate);
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N,
             bool accumulate = false) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> Am(A, K, M), Bm(B, K, N);
    gemm_blocked<T>(Am.transpose(), Bm, C, M, N, accumulate);
}

// im2col for x[C,H,W] -> col[C*k*k, Ho*Wo] with zero padding.
template <class T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, T* col) {
    const std::int64_t P = Ho * Wo;
    parallel_blocks(C * k * k, 8, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
            const std::int64_t c = r / (k * k);
            const std::int64_t ky = (r / k) % k;
            const std::int64_t kx = r % k;
            T* dst = col + r * P;
            const T* src = x + c * H * W;
            for (std::int64_t oy = 0; oy < Ho; ++oy) {
                const std::int64_t iy = oy * stride + ky - pad;
                T* drow = dst + oy * Wo;
                if (iy < 0 || iy >= H) {
                    std::fill(drow, drow + Wo, T(0));
                    continue;
                }
                if (stride == 1) {
                    // valid ox range: 0 <= ox + kx - pad < W
                    const std::int64_t lo = std::max<std::int64_t>(0, pad - kx);
                    const std::int64_t hi = std::min<std::int64_t>(Wo, W + pad - kx);
                    if (lo > 0) std::fill(drow, drow + lo, T(0));
                    if (hi > lo) std::memcpy(drow + lo, src + iy * W + (lo + kx - pad), sizeof(T) * static_cast<std::size_t>(hi - lo));
                    if (hi < Wo) std::fill(drow + std::max<std::int64_t>(hi, lo), drow + Wo, T(0));
                } else {
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        const std::int64_t ix = ox * stride + kx - pad;
                        drow[ox] = (ix >= 0 && ix < W) ? src[iy * W + ix] : T(0);
                    }
                }
            }
        }
    });
}

// scatter-add inverse of im2col; gx must be zero-initialized by the caller.
template <class T>
void col2im_add(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
                std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, T* gx) {
    const std::int64_t P = Ho * Wo;
    parallel_blocks(C, 1, [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t c = c0; c < c1; ++c) {
            T* dst = gx + c * H * W;
            for (std::int64_t ky = 0; ky < k; ++ky)
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    const T* src = col + ((c * k + ky) * k + kx) * P;
                    for (std::int64_t oy = 0; oy < Ho; ++oy) {
                        const std::int64_t iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const T* srow = src + oy * Wo;
                        for (std::int64_t ox = 0; ox < Wo; ++ox) {
                            const std::int64_t ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < W) dst[iy * W + ix] += srow[ox];
                        }
                    }
                }
        }
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and scalar ops

namespace detail {

template <class T, class Fwd, class Bwd>
TensorT<T> unary_op(const TensorT<T>& x, Fwd fwd, Bwd bwd) {
    auto n = make_result<T>(x.shape(), {x.node()});
    const T* xi = x.data();
    T* out = n->value.data();
    const std::int64_t N = n->numel();
    for (std::int64_t i = 0; i < N; ++i) out[i] = fwd(xi[i]);
    if (n->requires_grad) {
        auto xp = x.node();
        auto np = n.get();
        n->backward_fn = [xp, np, bwd](Node<T>& self) {
            xp->ensure_grad();
            const std::int64_t N2 = self.numel();
            for (std::int64_t i = 0; i < N2; ++i)
                xp->grad[i] += self.grad[i] * bwd(xp->value[i], np->value[i]);
        };
    }
    return TensorT<T>(n);
}

}  // namespace detail

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T xv, T) { return xv > T(0) ? T(1) : T(0); });
}

// outputs stay strictly inside (-1,1); saturated values are nudged to the
// nearest representable interior value
template <class T>
TensorT<T> tanh(const TensorT<T>& x) {
    return detail::unary_op(
        x,
        [](T v) {
            const T y = std::tanh(v);
            if (y >= T(1)) return std::nextafter(T(1), T(0));
            if (y <= T(-1)) return std::nextafter(T(-1), T(0));
            return y;
        },
        [](T, T yv) { return T(1) - yv * yv; });
}

// outputs stay strictly inside (0,1)
template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    return detail::unary_op(
        x,
        [](T v) {
            T y;
            if (v >= T(0)) {
                y = T(1) / (T(1) + std::exp(-v));
            } else {
                const T e = std::exp(v);
                y = e / (T(1) + e);
            }
            if (y >= T(1)) return std::nextafter(T(1), T(0));
            if (y <= T(0)) return std::nextafter(T(0), T(1));
            return y;
        },
        [](T, T yv) { return yv * (T(1) - yv); });
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
TensorT<T> neg(const TensorT<T>& x) {
    return mul_scalar(x, T(-1));
}

namespace detail {

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto n = detail::make_result<T>(a.shape(), {a.node(), b.node()});
    const std::int64_t N = n->numel();
    for (std::int64_t i = 0; i < N; ++i) n->value[i] = a.data()[i] + b.data()[i];
    if (n->requires_grad) {
        auto ap = a.node(), bp = b.node();
        n->backward_fn = [ap, bp](detail::Node<T>& self) {
            if (ap->requires_grad) detail::accum(*ap, self.grad);
            if (bp->requires_grad) detail::accum(*bp, self.grad);
        };
    }
    return TensorT<T>(n);
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    auto n = detail::make_result<T>(a.shape(), {a.node(), b.node()});
    const std::int64_t N = n->numel();
    for (std::int64_t i = 0; i < N; ++i) n->value[i] = a.data()[i] - b.data()[i];
    if (n->requires_grad) {
        auto ap = a.node(), bp = b.node();
        n->backward_fn = [ap, bp](detail::Node<T>& self) {
            if (ap->requires_grad) detail::accum(*ap, self.grad);
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bp->grad[i] -= self.grad[i];
            }
        };
    }
    return TensorT<T>(n);
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    auto n = detail::make_result<T>(a.shape(), {a.node(), b.node()});
    const std::int64_t N = n->numel();
    for (std::int64_t i = 0; i < N; ++i) n->value[i] = a.data()[i] * b.data()[i];
    if (n->requires_grad) {
        auto ap = a.node(), bp = b.node();
        n->backward_fn = [ap, bp](detail::Node<T>& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    ap->grad[i] += self.grad[i] * bp->value[i];
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    bp->grad[i] += self.grad[i] * ap->value[i];
            }
        };
    }
    return TensorT<T>(n);
}

// out[c,h,w] = x[c,h,w] * s[c]; s is [C] or [C,1,1]
template <class T>
TensorT<T> scale_channels(const TensorT<T>& x, const TensorT<T>& s) {
    const std::int64_t C = x.dim(0);
    if (s.numel() != C)
        throw std::invalid_argument("scale_channels: expected " + std::to_string(C) + " scales, got " +
                                    std::to_string(s.numel()));
    auto n = detail::make_result<T>(x.shape(), {x.node(), s.node()});
    const std::int64_t S = x.numel() / C;
    for (std::int64_t c = 0; c < C; ++c) {
        const T sc = s.data()[c];
        const T* xi = x.data() + c * S;
        T* out = n->value.data() + c * S;
        for (std::int64_t i = 0; i < S; ++i) out[i] = xi[i] * sc;
    }
    if (n->requires_grad) {
        auto xp = x.node(), sp = s.node();
        n->backward_fn = [xp, sp, C, S](detail::Node<T>& self) {
            if (xp->requires_grad) {
                xp->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) {
                    const T sc = sp->value[static_cast<std::size_t>(c)];
                    for (std::int64_t i = 0; i < S; ++i)
                        xp->grad[static_cast<std::size_t>(c * S + i)] +=
                            self.grad[static_cast<std::size_t>(c * S + i)] * sc;
                }
            }
            if (sp->requires_grad) {
                sp->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) {
                    T acc = T(0);
                    for (std::int64_t i = 0; i < S; ++i)
                        acc += self.grad[static_cast<std::size_t>(c * S + i)] *
                               xp->value[static_cast<std::size_t>(c * S + i)];
                    sp->grad[static_cast<std::size_t>(c)] += acc;
                }
            }
        };
    }
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// shape ops

template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(new_shape));
    auto n = detail::make_result<T>(new_shape, {x.node()});
    n->value = x.node()->value;
    if (n->requires_grad) {
        auto xp = x.node();
        n->backward_fn = [xp](detail::Node<T>& self) { detail::accum(*xp, self.grad); };
    }
    return TensorT<T>(n);
}

template <class T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int dim) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    const int nd = xs[0].ndim();
    if (dim < 0 || dim >= nd) throw std::invalid_argument("concat: bad dim");
    Shape out_shape = xs[0].shape();
    std::int64_t total_d = 0;
    for (const auto& x : xs) {
        if (x.ndim() != nd) throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != dim && x.dim(i) != out_shape[static_cast<std::size_t>(i)])
                throw std::invalid_argument("concat: shape mismatch at dim " + std::to_string(i));
        total_d += x.dim(dim);
    }
    out_shape[static_cast<std::size_t>(dim)] = total_d;

    std::vector<typename TensorT<T>::NodePtr> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    auto n = detail::make_result<T>(out_shape, parents);

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
    for (int i = dim + 1; i < nd; ++i) inner *= out_shape[static_cast<std::size_t>(i)];

    std::int64_t offset = 0;
    for (const auto& x : xs) {
        const std::int64_t d = x.dim(dim);
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(n->value.data() + (o * total_d + offset) * inner,
                        x.data() + o * d * inner, sizeof(T) * static_cast<std::size_t>(d * inner));
        offset += d;
    }
    if (n->requires_grad) {
        std::vector<typename TensorT<T>::NodePtr> ps = parents;
        std::vector<std::int64_t> dims;
        for (const auto& x : xs) dims.push_back(x.dim(dim));
        n->backward_fn = [ps, dims, outer, inner, total_d](detail::Node<T>& self) {
            std::int64_t off = 0;
            for (std::size_t j = 0; j < ps.size(); ++j) {
                const std::int64_t d = dims[j];
                if (ps[j]->requires_grad) {
                    ps[j]->ensure_grad();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const T* g = self.grad.data() + (o * total_d + off) * inner;
                        T* dst = ps[j]->grad.data() + o * d * inner;
                        for (std::int64_t i = 0; i < d * inner; ++i) dst[i] += g[i];
                    }
                }
                off += d;
            }
        };
    }
    return TensorT<T>(n);
}

template <class T>
TensorT<T> slice(const TensorT<T>& x, int dim, std::int64_t start, std::int64_t len) {
    const int nd = x.ndim();
    if (dim < 0 || dim >= nd) throw std::invalid_argument("slice: bad dim");
    if (start < 0 || len <= 0 || start + len > x.dim(dim))
        throw std::invalid_argument("slice: range out of bounds");
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(dim)] = len;
    auto n = detail::make_result<T>(out_shape, {x.node()});

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= x.dim(i);
    for (int i = dim + 1; i < nd; ++i) inner *= x.dim(i);
    const std::int64_t D = x.dim(dim);
    for (std::int64_t o = 0; o < outer; ++o)
        std::memcpy(n->value.data() + o * len * inner, x.data() + (o * D + start) * inner,
                    sizeof(T) * static_cast<std::size_t>(len * inner));
    if (n->requires_grad) {
        auto xp = x.node();
        n->backward_fn = [xp, outer, inner, D, start, len](detail::Node<T>& self) {
            xp->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                const T* g = self.grad.data() + o * len * inner;
                T* dst = xp->grad.data() + (o * D + start) * inner;
                for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
            }
        };
    }
    return TensorT<T>(n);
}

template <class T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs) {
    return concat(xs, 0);
}

template <class T>
TensorT<T> slice_channels(const TensorT<T>& x, std::int64_t c0, std::int64_t c1) {
    return slice(x, 0, c0, c1 - c0);
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
TensorT<T> sum(const TensorT<T>& x) {
    auto n = detail::make_result<T>({1}, {x.node()});
    // fixed-size chunked summation keeps the result independent of threading
    double acc = 0.0;
    const std::int64_t N = x.numel();
    for (std::int64_t i = 0; i < N; ++i) acc += static_cast<double>(x.data()[i]);
    n->value[0] = static_cast<T>(acc);
    if (n->requires_grad) {
        auto xp = x.node();
        n->backward_fn = [xp](detail::Node<T>& self) {
            xp->ensure_grad();
            const T g = self.grad[0];
            for (auto& v : xp->grad) v += g;
        };
    }
    return TensorT<T>(n);
}

template <class T>
TensorT<T> mean(const TensorT<T>& x) {
    return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

// mean(|a - b|); the subgradient at zero is taken as 0
template <class T>
TensorT<T> mean_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mean_abs_diff");
    auto n = detail::make_result<T>({1}, {a.node(), b.node()});
    const std::int64_t N = a.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < N; ++i) acc += std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
    n->value[0] = static_cast<T>(acc / static_cast<double>(N));
    if (n->requires_grad) {
        auto ap = a.node(), bp = b.node();
        n->backward_fn = [ap, bp, N](detail::Node<T>& self) {
            const T g = self.grad[0] / static_cast<T>(N);
            if (ap->requires_grad) ap->ensure_grad();
            if (bp->requires_grad) bp->ensure_grad();
            for (std::int64_t i = 0; i < N; ++i) {
                const T d = ap->value[static_cast<std::size_t>(i)] - bp->value[static_cast<std::size_t>(i)];
                const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                if (ap->requires_grad) ap->grad[static_cast<std::size_t>(i)] += g * s;
                if (bp->requires_grad) bp->grad[static_cast<std::size_t>(i)] -= g * s;
            }
        };
    }
    return TensorT<T>(n);
}

// per-channel spatial mean: [C,H,W] -> [C,1,1]
template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    if (x.ndim() != 3) throw std::invalid_argument("global_avg_pool: expected [C,H,W], got " + shape_str(x.shape()));
    const std::int64_t C = x.dim(0), S = x.dim(1) * x.dim(2);
    auto n = detail::make_result<T>({C, 1, 1}, {x.node()});
    for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        const T* xi = x.data() + c * S;
        for (std::int64_t i = 0; i < S; ++i) acc += static_cast<double>(xi[i]);
        n->value[static_cast<std::size_t>(c)] = static_cast<T>(acc / static_cast<double>(S));
    }
    if (n->requires_grad) {
        auto xp = x.node();
        n->backward_fn = [xp, C, S](detail::Node<T>& self) {
            xp->ensure_grad();
            for (std::int64_t c = 0; c < C; ++c) {
                const T g = self.grad[static_cast<std::size_t>(c)] / static_cast<T>(S);
                T* dst = xp->grad.data() + c * S;
                for (std::int64_t i = 0; i < S; ++i) dst[i] += g;
            }
        };
    }
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// convolution family

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  std::int64_t stride = 1, std::int64_t padding = 0) {
    if (x.ndim() != 3 || w.ndim() != 4)
        throw std::invalid_argument("conv2d: expected x[C,H,W], w[Co,Ci,k,k]");
    const std::int64_t Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::int64_t Co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != Ci)
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(w.dim(1)) +
                                    " input channels, tensor has " + std::to_string(Ci));
    if (w.dim(3) != k || k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be square with odd size");
    if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
    if (bias.defined() && bias.numel() != Co) throw std::invalid_argument("conv2d: bias size mismatch");
    const std::int64_t Ho = (H + 2 * padding - k) / stride + 1;
    const std::int64_t Wo = (W + 2 * padding - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

    std::vector<typename TensorT<T>::NodePtr> parents = {x.node(), w.node()};
    if (bias.defined()) parents.push_back(bias.node());
    auto n = detail::make_result<T>({Co, Ho, Wo}, parents);

    const std::int64_t K = Ci * k * k, P = Ho * Wo;
    std::vector<T> col(static_cast<std::size_t>(K * P));
    detail::im2col(x.data(), Ci, H, W, k, stride, padding, Ho, Wo, col.data());
    detail::gemm_nn(w.data(), col.data(), n->value.data(), Co, K, P);
    if (bias.defined()) {
        for (std::int64_t co = 0; co < Co; ++co) {
            const T b = bias.data()[co];
            T* out = n->value.data() + co * P;
            for (std::int64_t p = 0; p < P; ++p) out[p] += b;
        }
    }

    if (n->requires_grad) {
        auto xp = x.node(), wp = w.node();
        auto bp = bias.defined() ? bias.node() : nullptr;
        n->backward_fn = [xp, wp, bp, Ci, H, W, k, stride, padding, Ho, Wo](detail::Node<T>& self) {
            const std::int64_t Co2 = self.shape[0];
            const std::int64_t K2 = Ci * k * k, P2 = Ho * Wo;
            // col is recomputed rather than kept alive with the graph
            std::vector<T> col2(static_cast<std::size_t>(K2 * P2));
            detail::im2col(xp->value.data(), Ci, H, W, k, stride, padding, Ho, Wo, col2.data());
            if (wp->requires_grad) {
                wp->ensure_grad();
                detail::gemm_nt(self.grad.data(), col2.data(), wp->grad.data(), Co2, P2, K2, true);
            }
            if (bp && bp->requires_grad) {
                bp->ensure_grad();
                for (std::int64_t co = 0; co < Co2; ++co) {
                    double acc = 0.0;
                    const T* g = self.grad.data() + co * P2;
                    for (std::int64_t p = 0; p < P2; ++p) acc += static_cast<double>(g[p]);
                    bp->grad[static_cast<std::size_t>(co)] += static_cast<T>(acc);
                }
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                std::vector<T> gcol(static_cast<std::size_t>(K2 * P2));
                detail::gemm_tn(wp->value.data(), self.grad.data(), gcol.data(), K2, Co2, P2);
                detail::col2im_add(gcol.data(), Ci, H, W, k, stride, padding, Ho, Wo, xp->grad.data());
            }
        };
    }
    return TensorT<T>(n);
}

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, std::int64_t stride = 1,
                  std::int64_t padding = 0) {
    return conv2d(x, w, TensorT<T>(), stride, padding);
}

// transposed convolution, weight [Ci,Co,k,k]; used with k=stride=2 for exact 2x upsampling
template <class T>
TensorT<T> conv_transpose2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                            std::int64_t stride) {
    if (x.ndim() != 3 || w.ndim() != 4) throw std::invalid_argument("conv_transpose2d: expected x[C,H,W], w[Ci,Co,k,k]");
    const std::int64_t Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::int64_t Co = w.dim(1), k = w.dim(2);
    if (w.dim(0) != Ci) throw std::invalid_argument("conv_transpose2d: channel mismatch");
    if (w.dim(3) != k || stride < 1) throw std::invalid_argument("conv_transpose2d: bad kernel/stride");
    const std::int64_t Ho = (H - 1) * stride + k, Wo = (W - 1) * stride + k;

    std::vector<typename TensorT<T>::NodePtr> parents = {x.node(), w.node()};
    if (bias.defined()) parents.push_back(bias.node());
    auto n = detail::make_result<T>({Co, Ho, Wo}, parents);
    std::fill(n->value.begin(), n->value.end(), T(0));

    parallel_blocks(Co, 1, [&](std::int64_t b0, std::int64_t b1) {
        for (std::int64_t co = b0; co < b1; ++co) {
            T* out = n->value.data() + co * Ho * Wo;
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
                const T* xi = x.data() + ci * H * W;
                const T* wk = w.data() + (ci * Co + co) * k * k;
                for (std::int64_t y = 0; y < H; ++y)
                    for (std::int64_t xcol = 0; xcol < W; ++xcol) {
                        const T v = xi[y * W + xcol];
                        T* base = out + (y * stride) * Wo + xcol * stride;
                        for (std::int64_t ky = 0; ky < k; ++ky)
                            for (std::int64_t kx = 0; kx < k; ++kx)
                                base[ky * Wo + kx] += v * wk[ky * k + kx];
                    }
            }
            if (bias.defined()) {
                const T b = bias.data()[co];
                for (std::int64_t i = 0; i < Ho * Wo; ++i) out[i] += b;
            }
        }
    });

    if (n->requires_grad) {
        auto xp = x.node(), wp = w.node();
        auto bp = bias.defined() ? bias.node() : nullptr;
        n->backward_fn = [xp, wp, bp, Ci, Co, H, W, k, stride, Ho, Wo](detail::Node<T>& self) {
            if (bp && bp->requires_grad) {
                bp->ensure_grad();
                for (std::int64_t co = 0; co < Co; ++co) {
                    double acc = 0.0;
                    const T* g = self.grad.data() + co * Ho * Wo;
                    for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += static_cast<double>(g[i]);
                    bp->grad[static_cast<std::size_t>(co)] += static_cast<T>(acc);
                }
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                parallel_blocks(Ci, 1, [&](std::int64_t b0, std::int64_t b1) {
                    for (std::int64_t ci = b0; ci < b1; ++ci) {
                        T* gx = xp->grad.data() + ci * H * W;
                        for (std::int64_t co = 0; co < Co; ++co) {
                            const T* g = self.grad.data() + co * Ho * Wo;
                            const T* wk = wp->value.data() + (ci * Co + co) * k * k;
                            for (std::int64_t y = 0; y < H; ++y)
                                for (std::int64_t xcol = 0; xcol < W; ++xcol) {
                                    T acc = T(0);
                                    const T* base = g + (y * stride) * Wo + xcol * stride;
                                    for (std::int64_t ky = 0; ky < k; ++ky)
                                        for (std::int64_t kx = 0; kx < k; ++kx)
                                            acc += base[ky * Wo + kx] * wk[ky * k + kx];
                                    gx[y * W + xcol] += acc;
                                }
                        }
                    }
                });
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                parallel_blocks(Ci, 1, [&](std::int64_t b0, std::int64_t b1) {
                    for (std::int64_t ci = b0; ci < b1; ++ci)
                        for (std::int64_t co = 0; co < Co; ++co) {
                            T* gw = wp->grad.data() + (ci * Co + co) * k * k;
                            const T* xi = xp->value.data() + ci * H * W;
                            const T* g = self.grad.data() + co * Ho * Wo;
                            for (std::int64_t y = 0; y < H; ++y)
                                for (std::int64_t xcol = 0; xcol < W; ++xcol) {
                                    const T v = xi[y * W + xcol];
                                    const T* base = g + (y * stride) * Wo + xcol * stride;
                                    for (std::int64_t ky = 0; ky < k; ++ky)
                                        for (std::int64_t kx = 0; kx < k; ++kx)
                                            gw[ky * k + kx] += v * base[ky * Wo + kx];
                                }
                        }
                });
            }
        };
    }
    return TensorT<T>(n);
}

// [C,H,W] -> [C,k*k,H*W], zero padding (k-1)/2, stride 1
template <class T>
TensorT<T> unfold(const TensorT<T>& x, std::int64_t k, std::int64_t padding) {
    if (x.ndim() != 3) throw std::invalid_argument("unfold: expected [C,H,W]");
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("unfold: kernel size must be odd, got " + std::to_string(k));
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::int64_t Ho = H + 2 * padding - k + 1, Wo = W + 2 * padding - k + 1;
    if (Ho != H || Wo != W) {
        if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("unfold: kernel larger than padded input");
    }
    auto n = detail::make_result<T>({C, k * k, Ho * Wo}, {x.node()});
    detail::im2col(x.data(), C, H, W, k, 1, padding, Ho, Wo, n->value.data());
    if (n->requires_grad) {
        auto xp = x.node();
        n->backward_fn = [xp, C, H, W, k, padding, Ho, Wo](detail::Node<T>& self) {
            xp->ensure_grad();
            detail::col2im_add(self.grad.data(), C, H, W, k, 1, padding, Ho, Wo, xp->grad.data());
        };
    }
    return TensorT<T>(n);
}

// scatter-add inverse of unfold; unfold-backward is exactly this map
template <class T>
TensorT<T> fold(const TensorT<T>& cols, std::int64_t H, std::int64_t W, std::int64_t k,
                std::int64_t padding) {
    if (cols.ndim() != 3 || cols.dim(1) != k * k)
        throw std::invalid_argument("fold: expected [C,k*k,P]");
    const std::int64_t C = cols.dim(0);
    const std::int64_t Ho = H + 2 * padding - k + 1, Wo = W + 2 * padding - k + 1;
    if (cols.dim(2) != Ho * Wo) throw std::invalid_argument("fold: column count does not match target size");
    auto n = detail::make_result<T>({C, H, W}, {cols.node()});
    std::fill(n->value.begin(), n->value.end(), T(0));
    detail::col2im_add(cols.data(), C, H, W, k, 1, padding, Ho, Wo, n->value.data());
    if (n->requires_grad) {
        auto cp = cols.node();
        n->backward_fn = [cp, C, H, W, k, padding, Ho, Wo](detail::Node<T>& self) {
            cp->ensure_grad();
            std::vector<T> g(cp->grad.size());
            detail::im2col(self.grad.data(), C, H, W, k, 1, padding, Ho, Wo, g.data());
            for (std::size_t i = 0; i < g.size(); ++i) cp->grad[i] += g[i];
        };
    }
    return TensorT<T>(n);
}

// per-channel dynamic filtering: O[c,p] = sum_i wdyn[c,i] * neighborhood_i(x[c], p)
template <class T>
TensorT<T> depthwise_filter(const TensorT<T>& x, const TensorT<T>& wdyn, std::int64_t k) {
    if (x.ndim() != 3) throw std::invalid_argument("depthwise_filter: expected x[C,H,W]");
    if (k % 2 == 0) throw std::invalid_argument("depthwise_filter: kernel size must be odd");
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2), pad = (k - 1) / 2;
    if (wdyn.ndim() != 2 || wdyn.dim(0) != C || wdyn.dim(1) != k * k)
        throw std::invalid_argument("depthwise_filter: weights must be [C,k*k], got " + shape_str(wdyn.shape()));
    auto n = detail::make_result<T>({C, H, W}, {x.node(), wdyn.node()});
    std::fill(n->value.begin(), n->value.end(), T(0));
    parallel_blocks(C, 1, [&](std::int64_t b0, std::int64_t b1) {
        for (std::int64_t c = b0; c < b1; ++c) {
            const T* xi = x.data() + c * H * W;
            const T* wk = wdyn.data() + c * k * k;
            T* out = n->value.data() + c * H * W;
            for (std::int64_t ky = 0; ky < k; ++ky)
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    const T wv = wk[ky * k + kx];
                    for (std::int64_t y = 0; y < H; ++y) {
                        const std::int64_t iy = y + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const std::int64_t x_lo = std::max<std::int64_t>(0, pad - kx);
                        const std::int64_t x_hi = std::min<std::int64_t>(W, W + pad - kx);
                        const T* src = xi + iy * W + (x_lo + kx - pad);
                        T* dst = out + y * W + x_lo;
                        for (std::int64_t i = 0; i < x_hi - x_lo; ++i) dst[i] += wv * src[i];
                    }
                }
        }
    });
    if (n->requires_grad) {
        auto xp = x.node(), wp = wdyn.node();
        n->backward_fn = [xp, wp, C, H, W, k, pad](detail::Node<T>& self) {
            if (wp->requires_grad) wp->ensure_grad();
            if (xp->requires_grad) xp->ensure_grad();
            parallel_blocks(C, 1, [&](std::int64_t b0, std::int64_t b1) {
                for (std::int64_t c = b0; c < b1; ++c) {
                    const T* g = self.grad.data() + c * H * W;
                    const T* xi = xp->value.data() + c * H * W;
                    const T* wk = wp->value.data() + c * k * k;
                    for (std::int64_t ky = 0; ky < k; ++ky)
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t idx = ky * k + kx;
                            double gw = 0.0;
                            for (std::int64_t y = 0; y < H; ++y) {
                                const std::int64_t iy = y + ky - pad;
                                if (iy < 0 || iy >= H) continue;
                                for (std::int64_t xc = 0; xc < W; ++xc) {
                                    const std::int64_t ix = xc + kx - pad;
                                    if (ix < 0 || ix >= W) continue;
                                    const T gv = g[y * W + xc];
                                    if (wp->requires_grad) gw += static_cast<double>(gv) * static_cast<double>(xi[iy * W + ix]);
                                    if (xp->requires_grad)
                                        xp->grad[static_cast<std::size_t>(c * H * W + iy * W + ix)] += gv * wk[idx];
                                }
                            }
                            if (wp->requires_grad)
                                wp->grad[static_cast<std::size_t>(c * k * k + idx)] += static_cast<T>(gw);
                        }
                }
            });
        };
    }
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// batch normalization (statistics over all non-channel elements)

template <class T>
TensorT<T> batchnorm_train(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                           TensorT<T>& running_mean, TensorT<T>& running_var, T momentum = T(0.1),
                           T eps = T(1e-5)) {
    const std::int64_t C = x.dim(0), S = x.numel() / C;
    if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("batchnorm: affine parameter size mismatch");
    auto n = detail::make_result<T>(x.shape(), {x.node(), gamma.node(), beta.node()});
    std::vector<T> mu(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
        const T* xi = x.data() + c * S;
        double m = 0.0;
        for (std::int64_t i = 0; i < S; ++i) m += static_cast<double>(xi[i]);
        m /= static_cast<double>(S);
        double v = 0.0;
        for (std::int64_t i = 0; i < S; ++i) {
            const double d = static_cast<double>(xi[i]) - m;
            v += d * d;
        }
        v /= static_cast<double>(S);  // biased variance throughout
        mu[static_cast<std::size_t>(c)] = static_cast<T>(m);
        inv_std[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
        running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * static_cast<T>(m);
        running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * static_cast<T>(v);
    }
    for (std::int64_t c = 0; c < C; ++c) {
        const T g = gamma.data()[c], b = beta.data()[c], m = mu[static_cast<std::size_t>(c)],
                is = inv_std[static_cast<std::size_t>(c)];
        const T* xi = x.data() + c * S;
        T* out = n->value.data() + c * S;
        for (std::int64_t i = 0; i < S; ++i) out[i] = g * (xi[i] - m) * is + b;
    }
    if (n->requires_grad) {
        auto xp = x.node(), gp = gamma.node(), bp = beta.node();
        n->backward_fn = [xp, gp, bp, C, S, mu, inv_std](detail::Node<T>& self) {
            for (std::int64_t c = 0; c < C; ++c) {
                const T m = mu[static_cast<std::size_t>(c)], is = inv_std[static_cast<std::size_t>(c)];
                const T gam = gp->value[static_cast<std::size_t>(c)];
                const T* xi = xp->value.data() + c * S;
                const T* g = self.grad.data() + c * S;
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::int64_t i = 0; i < S; ++i) {
                    const double xh = static_cast<double>((xi[i] - m) * is);
                    sum_g += static_cast<double>(g[i]);
                    sum_gx += static_cast<double>(g[i]) * xh;
                }
                if (gp->requires_grad) {
                    gp->ensure_grad();
                    gp->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_gx);
                }
                if (bp->requires_grad) {
                    bp->ensure_grad();
                    bp->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_g);
                }
                if (xp->requires_grad) {
                    xp->ensure_grad();
                    const double mg = sum_g / static_cast<double>(S);
                    const double mgx = sum_gx / static_cast<double>(S);
                    T* gx = xp->grad.data() + c * S;
                    for (std::int64_t i = 0; i < S; ++i) {
                        const double xh = static_cast<double>((xi[i] - m) * is);
                        gx[i] += static_cast<T>(static_cast<double>(gam) * static_cast<double>(is) *
                                                (static_cast<double>(g[i]) - mg - xh * mgx));
                    }
                }
            }
        };
    }
    return TensorT<T>(n);
}

template <class T>
TensorT<T> batchnorm_eval(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                          const TensorT<T>& running_mean, const TensorT<T>& running_var,
                          T eps = T(1e-5)) {
    const std::int64_t C = x.dim(0), S = x.numel() / C;
    if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("batchnorm: affine parameter size mismatch");
    auto n = detail::make_result<T>(x.shape(), {x.node(), gamma.node(), beta.node()});
    std::vector<T> scale(static_cast<std::size_t>(C)), shift(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
        const T is = T(1) / std::sqrt(running_var.data()[c] + eps);
        scale[static_cast<std::size_t>(c)] = gamma.data()[c] * is;
        shift[static_cast<std::size_t>(c)] = beta.data()[c] - gamma.data()[c] * is * running_mean.data()[c];
    }
    for (std::int64_t c = 0; c < C; ++c) {
        const T* xi = x.data() + c * S;
        T* out = n->value.data() + c * S;
        for (std::int64_t i = 0; i < S; ++i) out[i] = scale[static_cast<std::size_t>(c)] * xi[i] + shift[static_cast<std::size_t>(c)];
    }
    if (n->requires_grad) {
        auto xp = x.node(), gp = gamma.node(), bp = beta.node();
        std::vector<T> rm(running_mean.data(), running_mean.data() + C);
        std::vector<T> is_vec(static_cast<std::size_t>(C));
        for (std::int64_t c = 0; c < C; ++c) is_vec[static_cast<std::size_t>(c)] = T(1) / std::sqrt(running_var.data()[c] + eps);
        n->backward_fn = [xp, gp, bp, C, S, rm, is_vec](detail::Node<T>& self) {
            for (std::int64_t c = 0; c < C; ++c) {
                const T is = is_vec[static_cast<std::size_t>(c)];
                const T gam = gp->value[static_cast<std::size_t>(c)];
                const T* g = self.grad.data() + c * S;
                if (xp->requires_grad) {
                    xp->ensure_grad();
                    T* gx = xp->grad.data() + c * S;
                    for (std::int64_t i = 0; i < S; ++i) gx[i] += g[i] * gam * is;
                }
                if (gp->requires_grad || bp->requires_grad) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    const T* xi = xp->value.data() + c * S;
                    for (std::int64_t i = 0; i < S; ++i) {
                        sum_g += static_cast<double>(g[i]);
                        sum_gx += static_cast<double>(g[i]) * static_cast<double>((xi[i] - rm[static_cast<std::size_t>(c)]) * is);
                    }
                    if (gp->requires_grad) {
                        gp->ensure_grad();
                        gp->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_gx);
                    }
                    if (bp->requires_grad) {
                        bp->ensure_grad();
                        bp->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_g);
                    }
                }
            }
        };
    }
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// bilinear resize (half-pixel centers); linear in x for fixed geometry

template <class T>
TensorT<T> bilinear_resize(const TensorT<T>& x, std::int64_t Ho, std::int64_t Wo) {
    if (x.ndim() != 3) throw std::invalid_argument("bilinear_resize: expected [C,H,W]");
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("bilinear_resize: target size must be >= 1");
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    auto n = detail::make_result<T>({C, Ho, Wo}, {x.node()});

    struct Tap {
        std::int64_t i0, i1;
        T w1;  // weight of i1; i0 gets 1-w1
    };
    auto make_taps = [](std::int64_t in, std::int64_t out) {
        std::vector<Tap> taps(static_cast<std::size_t>(out));
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::int64_t o = 0; o < out; ++o) {
            double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
            if (src < 0) src = 0;
            if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
            const std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
            const std::int64_t i1 = std::min(i0 + 1, in - 1);
            taps[static_cast<std::size_t>(o)] = {i0, i1, static_cast<T>(src - static_cast<double>(i0))};
        }
        return taps;
    };
    const auto ty = make_taps(H, Ho), tx = make_taps(W, Wo);

    for (std::int64_t c = 0; c < C; ++c) {
        const T* xi = x.data() + c * H * W;
        T* out = n->value.data() + c * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
            const auto& vy = ty[static_cast<std::size_t>(oy)];
            for (std::int64_t ox = 0; ox < Wo; ++ox) {
                const auto& vx = tx[static_cast<std::size_t>(ox)];
                const T a = xi[vy.i0 * W + vx.i0], b = xi[vy.i0 * W + vx.i1];
                const T c2 = xi[vy.i1 * W + vx.i0], d = xi[vy.i1 * W + vx.i1];
                const T top = a + vx.w1 * (b - a), bot = c2 + vx.w1 * (d - c2);
                out[oy * Wo + ox] = top + vy.w1 * (bot - top);
            }
        }
    }
    if (n->requires_grad) {
        auto xp = x.node();
        n->backward_fn = [xp, C, H, W, Ho, Wo, ty, tx](detail::Node<T>& self) {
            xp->ensure_grad();
            for (std::int64_t c = 0; c < C; ++c) {
                T* gx = xp->grad.data() + c * H * W;
                const T* g = self.grad.data() + c * Ho * Wo;
                for (std::int64_t oy = 0; oy < Ho; ++oy) {
                    const auto& vy = ty[static_cast<std::size_t>(oy)];
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        const auto& vx = tx[static_cast<std::size_t>(ox)];
                        const T gv = g[oy * Wo + ox];
                        const T wy1 = vy.w1, wx1 = vx.w1;
                        gx[vy.i0 * W + vx.i0] += gv * (T(1) - wy1) * (T(1) - wx1);
                        gx[vy.i0 * W + vx.i1] += gv * (T(1) - wy1) * wx1;
                        gx[vy.i1 * W + vx.i0] += gv * wy1 * (T(1) - wx1);
                        gx[vy.i1 * W + vx.i1] += gv * wy1 * wx1;
                    }
                }
            }
        };
    }
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// 2D discrete Fourier transform, unnormalized (DC term equals the channel sum)

namespace detail {

// symmetric twiddle matrices cos/sin(2*pi*u*v/N), cached per size
template <class T>
const std::pair<std::vector<T>, std::vector<T>>& dft_twiddles(std::int64_t N) {
    static std::map<std::int64_t, std::pair<std::vector<T>, std::vector<T>>> cache;
    static std::mutex m;
    std::lock_guard<std::mutex> lock(m);
    auto it = cache.find(N);
    if (it != cache.end()) return it->second;
    std::vector<T> c(static_cast<std::size_t>(N * N)), s(static_cast<std::size_t>(N * N));
    const double w = 2.0 * 3.14159265358979323846 / static_cast<double>(N);
    for (std::int64_t u = 0; u < N; ++u)
        for (std::int64_t v = 0; v < N; ++v) {
            const double ang = w * static_cast<double>((u * v) % N);
            c[static_cast<std::size_t>(u * N + v)] = static_cast<T>(std::cos(ang));
            s[static_cast<std::size_t>(u * N + v)] = static_cast<T>(std::sin(ang));
        }
    return cache.emplace(N, std::make_pair(std::move(c), std::move(s))).first->second;
}

}  // namespace detail

// x[C,H,W] -> [C,2,H,W] with [c,0]=Re, [c,1]=Im of the per-channel 2D DFT.
// Computed separably: X = (C_H - i S_H) x (C_W - i S_W) with symmetric twiddles.
template <class T>
TensorT<T> dft2(const TensorT<T>& x) {
    if (x.ndim() != 3) throw std::invalid_argument("dft2: expected [C,H,W]");
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const auto& [cH, sH] = detail::dft_twiddles<T>(H);
    const auto& [cW, sW] = detail::dft_twiddles<T>(W);
    auto n = detail::make_result<T>({C, 2, H, W}, {x.node()});

    std::vector<T> t1(static_cast<std::size_t>(H * W)), t2(static_cast<std::size_t>(H * W));
    std::vector<T> tmp(static_cast<std::size_t>(H * W));
    for (std::int64_t c = 0; c < C; ++c) {
        const T* xi = x.data() + c * H * W;
        T* re = n->value.data() + c * 2 * H * W;
        T* im = re + H * W;
        detail::gemm_nn(cH.data(), xi, t1.data(), H, H, W);  // C_H x
        detail::gemm_nn(sH.data(), xi, t2.data(), H, H, W);  // S_H x
        // Re = t1 C_W - t2 S_W ; Im = -(t1 S_W + t2 C_W)
        detail::gemm_nn(t1.data(), cW.data(), re, H, W, W);
        detail::gemm_nn(t2.data(), sW.data(), tmp.data(), H, W, W);
        for (std::int64_t i = 0; i < H * W; ++i) re[i] -= tmp[i];
        detail::gemm_nn(t1.data(), sW.data(), im, H, W, W);
        detail::gemm_nn(t2.data(), cW.data(), tmp.data(), H, W, W);
        for (std::int64_t i = 0; i < H * W; ++i) im[i] = -(im[i] + tmp[i]);
    }
    if (n->requires_grad) {
        auto xp = x.node();
        n->backward_fn = [xp, C, H, W](detail::Node<T>& self) {
            xp->ensure_grad();
            const auto& [cH2, sH2] = detail::dft_twiddles<T>(H);
            const auto& [cW2, sW2] = detail::dft_twiddles<T>(W);
            std::vector<T> a(static_cast<std::size_t>(H * W)), b(static_cast<std::size_t>(H * W));
            std::vector<T> tmp2(static_cast<std::size_t>(H * W)), gx(static_cast<std::size_t>(H * W));
            for (std::int64_t c = 0; c < C; ++c) {
                const T* gre = self.grad.data() + c * 2 * H * W;
                const T* gim = gre + H * W;
                // gx = C_H (gre C_W - gim S_W) - S_H (gre S_W + gim C_W)
                detail::gemm_nn(gre, cW2.data(), a.data(), H, W, W);
                detail::gemm_nn(gim, sW2.data(), tmp2.data(), H, W, W);
                for (std::int64_t i = 0; i < H * W; ++i) a[static_cast<std::size_t>(i)] -= tmp2[static_cast<std::size_t>(i)];
                detail::gemm_nn(gre, sW2.data(), b.data(), H, W, W);
                detail::gemm_nn(gim, cW2.data(), tmp2.data(), H, W, W);
                for (std::int64_t i = 0; i < H * W; ++i) b[static_cast<std::size_t>(i)] += tmp2[static_cast<std::size_t>(i)];
                detail::gemm_nn(cH2.data(), a.data(), gx.data(), H, H, W);
                detail::gemm_nn(sH2.data(), b.data(), tmp2.data(), H, H, W);
                T* dst = xp->grad.data() + c * H * W;
                for (std::int64_t i = 0; i < H * W; ++i)
                    dst[i] += gx[static_cast<std::size_t>(i)] - tmp2[static_cast<std::size_t>(i)];
            }
        };
    }
    return TensorT<T>(n);
}

// |DFT| per channel; evaluation utility, not part of the autodiff graph
template <class T>
TensorT<T> fft2_magnitude(const TensorT<T>& x) {
    NoGradGuard ng;
    TensorT<T> f = dft2(x.detached_copy());
    const std::int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    for (std::int64_t c = 0; c < C; ++c) {
        const T* re = f.data() + c * 2 * HW;
        const T* im = re + HW;
        T* o = out.data() + c * HW;
        for (std::int64_t i = 0; i < HW; ++i) o[i] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// losses on the graph

// numerically stable mean over labels of BCE(sigmoid(logit), target)
template <class T>
TensorT<T> bce_with_logits(const TensorT<T>& logits, const std::vector<T>& targets) {
    if (logits.numel() != static_cast<std::int64_t>(targets.size()))
        throw std::invalid_argument("bce_with_logits: logit/target count mismatch");
    auto n = detail::make_result<T>({1}, {logits.node()});
    const std::int64_t N = logits.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
        const double z = static_cast<double>(logits.data()[i]);
        const double y = static_cast<double>(targets[static_cast<std::size_t>(i)]);
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    n->value[0] = static_cast<T>(acc / static_cast<double>(N));
    if (n->requires_grad) {
        auto lp = logits.node();
        std::vector<T> y = targets;
        n->backward_fn = [lp, y, N](detail::Node<T>& self) {
            lp->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(N);
            for (std::int64_t i = 0; i < N; ++i) {
                const double z = static_cast<double>(lp->value[static_cast<std::size_t>(i)]);
                const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                lp->grad[static_cast<std::size_t>(i)] +=
                    g * static_cast<T>(p - static_cast<double>(y[static_cast<std::size_t>(i)]));
            }
        };
    }
    return TensorT<T>(n);
}

}  // namespace mdir
