#ifndef DIME_CORE_OPS_HPP
#define DIME_CORE_OPS_HPP

#include <cmath>
#include <memory>

#include "dime/core/autodiff.hpp"

namespace dime {

// Rough multiply-accumulate counter for the dense ops. Tests use it to
// assert complexity contracts (e.g. attention cost linear in H*W).
inline std::atomic<int64_t>& mac_counter() {
    static std::atomic<int64_t> c{0};
    return c;
}

namespace detail {

template <typename T, typename F, typename DF>
Tensor<T> map_unary(const Tensor<T>& x, F f, DF df) {
    Array<T> out(x.shape());
    const auto& xv = x.value().v;
    for (size_t i = 0; i < xv.size(); ++i) out.v[i] = f(xv[i]);
    return make_op<T>(std::move(out), {x}, [df](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gx = grad_buf<T>(p);
        for (size_t i = 0; i < gx.size(); ++i)
            gx[i] += self.grad[i] * df(p.val.v[i], self.val.v[i]);
    });
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise binary ----------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    Array<T> out(a.shape());
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.value().v[i] + b.value().v[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](typename Tensor<T>::Node& self) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) continue;
            auto& g = detail::grad_buf<T>(p);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Array<T> out(a.shape());
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.value().v[i] - b.value().v[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        if (pa.requires_grad) {
            auto& g = detail::grad_buf<T>(pa);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        auto& pb = *self.parents[1];
        if (pb.requires_grad) {
            auto& g = detail::grad_buf<T>(pb);
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Array<T> out(a.shape());
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.value().v[i] * b.value().v[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = detail::grad_buf<T>(pa);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.val.v[i];
        }
        if (pb.requires_grad) {
            auto& g = detail::grad_buf<T>(pb);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.val.v[i];
        }
    });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "div");
    Array<T> out(a.shape());
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.value().v[i] / b.value().v[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = detail::grad_buf<T>(pa);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.val.v[i];
        }
        if (pb.requires_grad) {
            auto& g = detail::grad_buf<T>(pb);
            for (size_t i = 0; i < g.size(); ++i)
                g[i] -= self.grad[i] * self.val.v[i] / pb.val.v[i];
        }
    });
}

// ---- elementwise unary -----------------------------------------------

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return detail::map_unary(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& x) {
    return detail::map_unary(x, [](T v) { return std::exp(v); }, [](T, T o) { return o; });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
    return detail::map_unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> abs_op(const Tensor<T>& x) {
    return detail::map_unary(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
inline T softplus_val(T v) {
    if (v > T(20)) return v;
    if (v < T(-20)) return std::exp(v);
    return std::log1p(std::exp(v));
}

template <typename T>
inline T sigmoid_val(T v) {
    if (v >= T(0)) {
        T e = std::exp(-v);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(v);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::map_unary(
        x, [](T v) { return softplus_val(v); }, [](T v, T) { return sigmoid_val(v); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::map_unary(
        x, [](T v) { return sigmoid_val(v); }, [](T, T o) { return o * (T(1) - o); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    return detail::map_unary(
        x, [](T v) { return v * sigmoid_val(v); },
        [](T v, T) {
            T s = sigmoid_val(v);
            return s * (T(1) + v * (T(1) - s));
        });
}

// x^p for constant exponent; callers must keep x away from 0 when p < 1.
template <typename T>
Tensor<T> pow_const(const Tensor<T>& x, T p) {
    return detail::map_unary(
        x, [p](T v) { return std::pow(v, p); },
        [p](T v, T) { return p * std::pow(v, p - T(1)); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
    return detail::map_unary(
        x, [lo](T v) { return v < lo ? lo : v; },
        [lo](T v, T) { return v > lo ? T(1) : T(0); });
}

// a*x + b with scalar constants.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
    return detail::map_unary(
        x, [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

// ---- broadcast with a 0-d tensor -------------------------------------

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) throw ShapeError("mul_scalar: scalar operand must have one element");
    Array<T> out(x.shape());
    T sv = s.value().v[0];
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = x.value().v[i] * sv;
    return detail::make_op<T>(std::move(out), {x, s}, [](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        auto& ps = *self.parents[1];
        T sv = ps.val.v[0];
        if (px.requires_grad) {
            auto& g = detail::grad_buf<T>(px);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sv;
        }
        if (ps.requires_grad) {
            auto& g = detail::grad_buf<T>(ps);
            T acc = T(0);
            for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px.val.v[i];
            g[0] += acc;
        }
    });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) throw ShapeError("add_scalar: scalar operand must have one element");
    Array<T> out(x.shape());
    T sv = s.value().v[0];
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = x.value().v[i] + sv;
    return detail::make_op<T>(std::move(out), {x, s}, [](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        auto& ps = *self.parents[1];
        if (px.requires_grad) {
            auto& g = detail::grad_buf<T>(px);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (ps.requires_grad) {
            auto& g = detail::grad_buf<T>(ps);
            T acc = T(0);
            for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i];
            g[0] += acc;
        }
    });
}

// ---- reductions -------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.value().v) acc += v;
    Array<T> out({1}, std::vector<T>{acc});
    return detail::make_op<T>(std::move(out), {x}, [](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = detail::grad_buf<T>(p);
        T go = self.grad[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += go;
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.value().v) acc += v;
    T n = static_cast<T>(x.numel());
    Array<T> out({1}, std::vector<T>{acc / n});
    return detail::make_op<T>(std::move(out), {x}, [n](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = detail::grad_buf<T>(p);
        T go = self.grad[0] / n;
        for (size_t i = 0; i < g.size(); ++i) g[i] += go;
    });
}

// H*W*C -> H*W*1, mean over the channel axis.
template <typename T>
Tensor<T> mean_over_channels(const Tensor<T>& x) {
    if (x.shape().size() != 3) throw ShapeError("mean_over_channels expects H*W*C");
    int H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    Array<T> out({H, W, 1});
    const auto& xv = x.value().v;
    for (int p = 0; p < H * W; ++p) {
        T acc = T(0);
        for (int c = 0; c < C; ++c) acc += xv[static_cast<size_t>(p) * C + c];
        out.v[static_cast<size_t>(p)] = acc / static_cast<T>(C);
    }
    return detail::make_op<T>(std::move(out), {x}, [C, H, W](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = detail::grad_buf<T>(p);
        for (int pos = 0; pos < H * W; ++pos) {
            T go = self.grad[static_cast<size_t>(pos)] / static_cast<T>(C);
            for (int c = 0; c < C; ++c) g[static_cast<size_t>(pos) * C + c] += go;
        }
    });
}

// H*W*C -> {1, C}, per-channel spatial mean (a row vector, gating input).
template <typename T>
Tensor<T> channel_means(const Tensor<T>& x) {
    if (x.shape().size() != 3) throw ShapeError("channel_means expects H*W*C");
    int H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    int P = H * W;
    Array<T> out({1, C});
    const auto& xv = x.value().v;
    for (int c = 0; c < C; ++c) {
        T acc = T(0);
        for (int p = 0; p < P; ++p) acc += xv[static_cast<size_t>(p) * C + c];
        out.v[static_cast<size_t>(c)] = acc / static_cast<T>(P);
    }
    return detail::make_op<T>(std::move(out), {x}, [C, P](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = detail::grad_buf<T>(p);
        for (int c = 0; c < C; ++c) {
            T go = self.grad[static_cast<size_t>(c)] / static_cast<T>(P);
            for (int pos = 0; pos < P; ++pos) g[static_cast<size_t>(pos) * C + c] += go;
        }
    });
}

// ---- movement ---------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: element count mismatch for " + shape_str(new_shape));
    Array<T> out(std::move(new_shape), x.value().v);
    return detail::make_op<T>(std::move(out), {x}, [](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = detail::grad_buf<T>(p);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

using IndexMap = std::shared_ptr<const std::vector<int64_t>>;

// out[i] = x[map[i]]. Covers transposes, scan unfolds, reflect padding,
// crops and channel slices; the backward pass is a scatter-add.
template <typename T>
Tensor<T> gather_map(const Tensor<T>& x, const IndexMap& map, std::vector<int> out_shape) {
    if (static_cast<int64_t>(map->size()) != shape_numel(out_shape))
        throw ShapeError("gather_map: map size does not match output shape");
    Array<T> out(std::move(out_shape));
    const auto& xv = x.value().v;
    const auto& m = *map;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = xv[static_cast<size_t>(m[i])];
    return detail::make_op<T>(std::move(out), {x}, [map](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = detail::grad_buf<T>(p);
        const auto& m = *map;
        for (size_t i = 0; i < self.grad.size(); ++i)
            g[static_cast<size_t>(m[i])] += self.grad[i];
    });
}

// out[map[i]] = x[i], other entries zero. Dual of gather_map; used to
// re-embed top-k gate weights into the dense expert slot vector.
template <typename T>
Tensor<T> scatter_map(const Tensor<T>& x, const IndexMap& map, std::vector<int> out_shape) {
    if (static_cast<int64_t>(map->size()) != x.numel())
        throw ShapeError("scatter_map: map size does not match input");
    Array<T> out(std::move(out_shape), T(0));
    const auto& xv = x.value().v;
    const auto& m = *map;
    for (size_t i = 0; i < xv.size(); ++i) out.v[static_cast<size_t>(m[i])] = xv[i];
    return detail::make_op<T>(std::move(out), {x}, [map](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = detail::grad_buf<T>(p);
        const auto& m = *map;
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[static_cast<size_t>(m[i])];
    });
}

// Concatenate H*W*C_i maps along the channel axis.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: empty input list");
    int H = xs[0].shape()[0], W = xs[0].shape()[1];
    int Cout = 0;
    for (const auto& x : xs) {
        if (x.shape().size() != 3 || x.shape()[0] != H || x.shape()[1] != W)
            throw ShapeError("concat_channels: spatial shape mismatch");
        Cout += x.shape()[2];
    }
    Array<T> out({H, W, Cout});
    int base = 0;
    for (const auto& x : xs) {
        int C = x.shape()[2];
        const auto& xv = x.value().v;
        for (int p = 0; p < H * W; ++p)
            for (int c = 0; c < C; ++c)
                out.v[static_cast<size_t>(p) * Cout + base + c] = xv[static_cast<size_t>(p) * C + c];
        base += C;
    }
    std::vector<int> cs;
    for (const auto& x : xs) cs.push_back(x.shape()[2]);
    return detail::make_op<T>(std::move(out), xs,
                              [H, W, Cout, cs](typename Tensor<T>::Node& self) {
        int base = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
            int C = cs[k];
            auto& p = *self.parents[k];
            if (p.requires_grad) {
                auto& g = detail::grad_buf<T>(p);
                for (int pos = 0; pos < H * W; ++pos)
                    for (int c = 0; c < C; ++c)
                        g[static_cast<size_t>(pos) * C + c] +=
                            self.grad[static_cast<size_t>(pos) * Cout + base + c];
            }
            base += C;
        }
    });
}

// ---- linear algebra ----------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    mac_counter().fetch_add(static_cast<int64_t>(m) * k * n, std::memory_order_relaxed);
    Array<T> out({m, n}, T(0));
    const T* av = a.value().v.data();
    const T* bv = b.value().v.data();
    for (int i = 0; i < m; ++i) {
        T* orow = out.v.data() + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            T x = av[static_cast<size_t>(i) * k + p];
            const T* brow = bv + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    }
    return detail::make_op<T>(std::move(out), {a, b}, [m, k, n](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T* g = self.grad.data();
        if (pa.requires_grad) {
            auto& ga = detail::grad_buf<T>(pa);
            const T* bv = pb.val.v.data();
            for (int i = 0; i < m; ++i) {
                const T* grow = g + static_cast<size_t>(i) * n;
                T* garow = ga.data() + static_cast<size_t>(i) * k;
                for (int p = 0; p < k; ++p) {
                    const T* brow = bv + static_cast<size_t>(p) * n;
                    T acc = T(0);
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    garow[p] += acc;
                }
            }
        }
        if (pb.requires_grad) {
            auto& gb = detail::grad_buf<T>(pb);
            const T* av = pa.val.v.data();
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    T x = av[static_cast<size_t>(i) * k + p];
                    const T* grow = g + static_cast<size_t>(i) * n;
                    T* gbrow = gb.data() + static_cast<size_t>(p) * n;
                    for (int j = 0; j < n; ++j) gbrow[j] += x * grow[j];
                }
        }
    });
}

// Row-wise softmax on an m x n matrix.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.shape().size() != 2) throw ShapeError("softmax_rows expects a matrix");
    int m = x.shape()[0], n = x.shape()[1];
    Array<T> out({m, n});
    const auto& xv = x.value().v;
    for (int i = 0; i < m; ++i) {
        const T* row = xv.data() + static_cast<size_t>(i) * n;
        T mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        T* orow = out.v.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= denom;
    }
    return detail::make_op<T>(std::move(out), {x}, [m, n](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = detail::grad_buf<T>(p);
        for (int i = 0; i < m; ++i) {
            const T* y = self.val.v.data() + static_cast<size_t>(i) * n;
            const T* go = self.grad.data() + static_cast<size_t>(i) * n;
            T dot = T(0);
            for (int j = 0; j < n; ++j) dot += go[j] * y[j];
            T* gr = g.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) gr[j] += y[j] * (go[j] - dot);
        }
    });
}

}  // namespace dime

#endif
