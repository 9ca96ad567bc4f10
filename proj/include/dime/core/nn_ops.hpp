#ifndef DIME_CORE_NN_OPS_HPP
#define DIME_CORE_NN_OPS_HPP

#include "dime/core/ops.hpp"

namespace dime {

// ---- dense 2-D convolution (HWC, zero padding) -------------------------
//
// x: {H, W, Cin}; w: {KH, KW, Cin, Cout}; optional bias {Cout}.
// Weight layout keeps the output channel contiguous so the inner loops
// vectorize.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int pad = 0) {
    if (x.shape().size() != 3 || w.shape().size() != 4)
        throw ShapeError("conv2d: expected HWC input and KKIO weights");
    const int H = x.shape()[0], W = x.shape()[1], Cin = x.shape()[2];
    const int KH = w.shape()[0], KW = w.shape()[1], Cout = w.shape()[3];
    if (w.shape()[2] != Cin) throw ShapeError("conv2d: channel mismatch");
    const bool has_bias = b.defined();
    if (has_bias && (b.shape().size() != 1 || b.shape()[0] != Cout))
        throw ShapeError("conv2d: bad bias shape");
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    if (OH <= 0 || OW <= 0) throw ShapeError("conv2d: output would be empty");
    mac_counter().fetch_add(static_cast<int64_t>(OH) * OW * KH * KW * Cin * Cout,
                            std::memory_order_relaxed);

    Array<T> out({OH, OW, Cout}, T(0));
    {
        const T* xv = x.value().v.data();
        const T* wv = w.value().v.data();
        T* ov = out.v.data();
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                T* orow = ov + (static_cast<size_t>(oy) * OW + ox) * Cout;
                if (has_bias) {
                    const T* bv = b.value().v.data();
                    for (int oc = 0; oc < Cout; ++oc) orow[oc] = bv[oc];
                }
                for (int ky = 0; ky < KH; ++ky) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < KW; ++kx) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        const T* xrow = xv + (static_cast<size_t>(iy) * W + ix) * Cin;
                        const T* wbase =
                            wv + (static_cast<size_t>(ky) * KW + kx) * Cin * Cout;
                        for (int ic = 0; ic < Cin; ++ic) {
                            T xval = xrow[ic];
                            const T* wrow = wbase + static_cast<size_t>(ic) * Cout;
                            for (int oc = 0; oc < Cout; ++oc) orow[oc] += xval * wrow[oc];
                        }
                    }
                }
            }
        }
    }

    std::vector<Tensor<T>> parents = has_bias ? std::vector<Tensor<T>>{x, w, b}
                                              : std::vector<Tensor<T>>{x, w};
    auto bp = [H, W, Cin, KH, KW, Cout, OH, OW, stride, pad,
               has_bias](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const T* g = self.grad.data();
        const T* xv = px.val.v.data();
        const T* wv = pw.val.v.data();
        if (has_bias) {
            auto& pb = *self.parents[2];
            if (pb.requires_grad) {
                auto& gb = detail::grad_buf<T>(pb);
                for (int p = 0; p < OH * OW; ++p) {
                    const T* grow = g + static_cast<size_t>(p) * Cout;
                    for (int oc = 0; oc < Cout; ++oc) gb[oc] += grow[oc];
                }
            }
        }
        const bool need_x = px.requires_grad;
        const bool need_w = pw.requires_grad;
        if (!need_x && !need_w) return;
        T* gx = need_x ? detail::grad_buf<T>(px).data() : nullptr;
        T* gw = need_w ? detail::grad_buf<T>(pw).data() : nullptr;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                const T* grow = g + (static_cast<size_t>(oy) * OW + ox) * Cout;
                for (int ky = 0; ky < KH; ++ky) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < KW; ++kx) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        size_t xoff = (static_cast<size_t>(iy) * W + ix) * Cin;
                        size_t woff = (static_cast<size_t>(ky) * KW + kx) * Cin * Cout;
                        if (need_w) {
                            const T* xrow = xv + xoff;
                            for (int ic = 0; ic < Cin; ++ic) {
                                T xval = xrow[ic];
                                T* gwrow = gw + woff + static_cast<size_t>(ic) * Cout;
                                for (int oc = 0; oc < Cout; ++oc) gwrow[oc] += xval * grow[oc];
                            }
                        }
                        if (need_x) {
                            T* gxrow = gx + xoff;
                            for (int ic = 0; ic < Cin; ++ic) {
                                const T* wrow = wv + woff + static_cast<size_t>(ic) * Cout;
                                T acc = T(0);
                                for (int oc = 0; oc < Cout; ++oc) acc += wrow[oc] * grow[oc];
                                gxrow[ic] += acc;
                            }
                        }
                    }
                }
            }
        }
    };
    return detail::make_op<T>(std::move(out), std::move(parents), std::move(bp));
}

// ---- depthwise convolution ---------------------------------------------
//
// x: {H, W, C}; w: {KH, KW, C}; optional bias {C}.
template <typename T>
Tensor<T> dwconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                   int pad = 0) {
    if (x.shape().size() != 3 || w.shape().size() != 3)
        throw ShapeError("dwconv2d: expected HWC input and KKC weights");
    const int H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    const int KH = w.shape()[0], KW = w.shape()[1];
    if (w.shape()[2] != C) throw ShapeError("dwconv2d: channel mismatch");
    const bool has_bias = b.defined();
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    if (OH <= 0 || OW <= 0) throw ShapeError("dwconv2d: output would be empty");
    mac_counter().fetch_add(static_cast<int64_t>(OH) * OW * KH * KW * C,
                            std::memory_order_relaxed);

    Array<T> out({OH, OW, C}, T(0));
    {
        const T* xv = x.value().v.data();
        const T* wv = w.value().v.data();
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                T* orow = out.v.data() + (static_cast<size_t>(oy) * OW + ox) * C;
                if (has_bias) {
                    const T* bv = b.value().v.data();
                    for (int c = 0; c < C; ++c) orow[c] = bv[c];
                }
                for (int ky = 0; ky < KH; ++ky) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < KW; ++kx) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        const T* xrow = xv + (static_cast<size_t>(iy) * W + ix) * C;
                        const T* wrow = wv + (static_cast<size_t>(ky) * KW + kx) * C;
                        for (int c = 0; c < C; ++c) orow[c] += xrow[c] * wrow[c];
                    }
                }
            }
        }
    }
    std::vector<Tensor<T>> parents = has_bias ? std::vector<Tensor<T>>{x, w, b}
                                              : std::vector<Tensor<T>>{x, w};
    auto bp = [H, W, C, KH, KW, OH, OW, stride, pad, has_bias](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const T* g = self.grad.data();
        const T* xv = px.val.v.data();
        const T* wv = pw.val.v.data();
        if (has_bias) {
            auto& pb = *self.parents[2];
            if (pb.requires_grad) {
                auto& gb = detail::grad_buf<T>(pb);
                for (int p = 0; p < OH * OW; ++p) {
                    const T* grow = g + static_cast<size_t>(p) * C;
                    for (int c = 0; c < C; ++c) gb[c] += grow[c];
                }
            }
        }
        const bool need_x = px.requires_grad;
        const bool need_w = pw.requires_grad;
        if (!need_x && !need_w) return;
        T* gx = need_x ? detail::grad_buf<T>(px).data() : nullptr;
        T* gw = need_w ? detail::grad_buf<T>(pw).data() : nullptr;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                const T* grow = g + (static_cast<size_t>(oy) * OW + ox) * C;
                for (int ky = 0; ky < KH; ++ky) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < KW; ++kx) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        size_t xoff = (static_cast<size_t>(iy) * W + ix) * C;
                        size_t woff = (static_cast<size_t>(ky) * KW + kx) * C;
                        if (need_w)
                            for (int c = 0; c < C; ++c) gw[woff + c] += xv[xoff + c] * grow[c];
                        if (need_x)
                            for (int c = 0; c < C; ++c) gx[xoff + c] += wv[woff + c] * grow[c];
                    }
                }
            }
        }
    };
    return detail::make_op<T>(std::move(out), std::move(parents), std::move(bp));
}

// ---- nearest-neighbour 2x upsample --------------------------------------

template <typename T>
Tensor<T> upsample_nearest_2x(const Tensor<T>& x) {
    if (x.shape().size() != 3) throw ShapeError("upsample_nearest_2x expects H*W*C");
    const int H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    Array<T> out({2 * H, 2 * W, C});
    const T* xv = x.value().v.data();
    for (int y = 0; y < 2 * H; ++y) {
        for (int xq = 0; xq < 2 * W; ++xq) {
            const T* src = xv + (static_cast<size_t>(y / 2) * W + xq / 2) * C;
            T* dst = out.v.data() + (static_cast<size_t>(y) * 2 * W + xq) * C;
            for (int c = 0; c < C; ++c) dst[c] = src[c];
        }
    }
    return detail::make_op<T>(std::move(out), {x}, [H, W, C](typename Tensor<T>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gx = detail::grad_buf<T>(p);
        const T* g = self.grad.data();
        for (int y = 0; y < 2 * H; ++y) {
            for (int xq = 0; xq < 2 * W; ++xq) {
                const T* grow = g + (static_cast<size_t>(y) * 2 * W + xq) * C;
                T* dst = gx.data() + (static_cast<size_t>(y / 2) * W + xq / 2) * C;
                for (int c = 0; c < C; ++c) dst[c] += grow[c];
            }
        }
    });
}

// ---- layer normalization over the channel axis ---------------------------

template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              T eps = T(1e-5)) {
    if (x.shape().size() != 3) throw ShapeError("layer_norm_channels expects H*W*C");
    const int P = x.shape()[0] * x.shape()[1];
    const int C = x.shape()[2];
    if (gamma.shape() != std::vector<int>{C} || beta.shape() != std::vector<int>{C})
        throw ShapeError("layer_norm_channels: affine parameter shape mismatch");

    Array<T> out(x.shape());
    auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(P));
    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(P));
    const T* xv = x.value().v.data();
    const T* gv = gamma.value().v.data();
    const T* bv = beta.value().v.data();
    for (int p = 0; p < P; ++p) {
        const T* row = xv + static_cast<size_t>(p) * C;
        T mu = T(0);
        for (int c = 0; c < C; ++c) mu += row[c];
        mu /= static_cast<T>(C);
        T var = T(0);
        for (int c = 0; c < C; ++c) {
            T d = row[c] - mu;
            var += d * d;
        }
        var /= static_cast<T>(C);
        T r = T(1) / std::sqrt(var + eps);
        (*mean)[static_cast<size_t>(p)] = mu;
        (*rstd)[static_cast<size_t>(p)] = r;
        T* orow = out.v.data() + static_cast<size_t>(p) * C;
        for (int c = 0; c < C; ++c) orow[c] = (row[c] - mu) * r * gv[c] + bv[c];
    }
    return detail::make_op<T>(
        std::move(out), {x, gamma, beta},
        [P, C, mean, rstd](typename Tensor<T>::Node& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const T* xv = px.val.v.data();
            const T* gv = pg.val.v.data();
            const T* g = self.grad.data();
            T* gxb = px.requires_grad ? detail::grad_buf<T>(px).data() : nullptr;
            T* ggb = pg.requires_grad ? detail::grad_buf<T>(pg).data() : nullptr;
            T* gbb = pb.requires_grad ? detail::grad_buf<T>(pb).data() : nullptr;
            std::vector<T> xhat(static_cast<size_t>(C));
            std::vector<T> dxh(static_cast<size_t>(C));
            for (int p = 0; p < P; ++p) {
                const T* row = xv + static_cast<size_t>(p) * C;
                const T* grow = g + static_cast<size_t>(p) * C;
                T mu = (*mean)[static_cast<size_t>(p)];
                T r = (*rstd)[static_cast<size_t>(p)];
                for (int c = 0; c < C; ++c) xhat[static_cast<size_t>(c)] = (row[c] - mu) * r;
                if (ggb)
                    for (int c = 0; c < C; ++c) ggb[c] += grow[c] * xhat[static_cast<size_t>(c)];
                if (gbb)
                    for (int c = 0; c < C; ++c) gbb[c] += grow[c];
                if (gxb) {
                    T m1 = T(0), m2 = T(0);
                    for (int c = 0; c < C; ++c) {
                        dxh[static_cast<size_t>(c)] = grow[c] * gv[c];
                        m1 += dxh[static_cast<size_t>(c)];
                        m2 += dxh[static_cast<size_t>(c)] * xhat[static_cast<size_t>(c)];
                    }
                    m1 /= static_cast<T>(C);
                    m2 /= static_cast<T>(C);
                    T* gxrow = gxb + static_cast<size_t>(p) * C;
                    for (int c = 0; c < C; ++c)
                        gxrow[c] += r * (dxh[static_cast<size_t>(c)] - m1 -
                                         xhat[static_cast<size_t>(c)] * m2);
                }
            }
        });
}

// ---- selective state-space recurrence ------------------------------------
//
// Core recurrence shared by the selective scan and its LTI diagnostic
// mode. For channel d and step t, with per-token delta/B/C:
//   abar[t,d,s] = exp(delta[t] * A[d,s])
//   h[t,d,s]    = abar * h[t-1,d,s] + delta[t] * B[t,s] * x[t,d]
//   y[t,d]      = sum_s C[t,s] * h[t,d,s]
// x: {L, D}; A: {D, S}; delta: {L}; B, C: {L, S}. Output {L, D}.
template <typename T>
Tensor<T> s6_core(const Tensor<T>& x, const Tensor<T>& A, const Tensor<T>& delta,
                  const Tensor<T>& B, const Tensor<T>& C_in) {
    if (x.shape().size() != 2 || A.shape().size() != 2)
        throw ShapeError("s6_core: x and A must be matrices");
    const int L = x.shape()[0], D = x.shape()[1], S = A.shape()[1];
    if (A.shape()[0] != D) throw ShapeError("s6_core: A rows must match channels");
    if (delta.numel() != L) throw ShapeError("s6_core: delta must have L entries");
    if (B.shape() != std::vector<int>{L, S} || C_in.shape() != std::vector<int>{L, S})
        throw ShapeError("s6_core: B/C must be {L, S}");
    mac_counter().fetch_add(static_cast<int64_t>(L) * D * S * 3, std::memory_order_relaxed);

    auto h = std::make_shared<std::vector<T>>(static_cast<size_t>(L) * D * S);
    auto abar = std::make_shared<std::vector<T>>(static_cast<size_t>(L) * D * S);
    Array<T> out({L, D}, T(0));
    {
        const T* xv = x.value().v.data();
        const T* Av = A.value().v.data();
        const T* dv = delta.value().v.data();
        const T* Bv = B.value().v.data();
        const T* Cv = C_in.value().v.data();
        for (int t = 0; t < L; ++t) {
            T dt = dv[t];
            const T* Bt = Bv + static_cast<size_t>(t) * S;
            const T* Ct = Cv + static_cast<size_t>(t) * S;
            for (int d = 0; d < D; ++d) {
                const T* Ad = Av + static_cast<size_t>(d) * S;
                size_t idx = (static_cast<size_t>(t) * D + d) * S;
                size_t pidx = idx - static_cast<size_t>(D) * S;
                T xtd = xv[static_cast<size_t>(t) * D + d];
                T y = T(0);
                for (int s = 0; s < S; ++s) {
                    T ab = std::exp(dt * Ad[s]);
                    T hprev = (t > 0) ? (*h)[pidx + s] : T(0);
                    T hv = ab * hprev + dt * Bt[s] * xtd;
                    (*abar)[idx + s] = ab;
                    (*h)[idx + s] = hv;
                    y += Ct[s] * hv;
                }
                out.v[static_cast<size_t>(t) * D + d] = y;
            }
        }
    }
    auto bp = [L, D, S, h, abar](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        auto& pA = *self.parents[1];
        auto& pd = *self.parents[2];
        auto& pB = *self.parents[3];
        auto& pC = *self.parents[4];
        const T* xv = px.val.v.data();
        const T* Av = pA.val.v.data();
        const T* dv = pd.val.v.data();
        const T* Bv = pB.val.v.data();
        const T* g = self.grad.data();
        T* gx = px.requires_grad ? detail::grad_buf<T>(px).data() : nullptr;
        T* gA = pA.requires_grad ? detail::grad_buf<T>(pA).data() : nullptr;
        T* gd = pd.requires_grad ? detail::grad_buf<T>(pd).data() : nullptr;
        T* gB = pB.requires_grad ? detail::grad_buf<T>(pB).data() : nullptr;
        T* gC = pC.requires_grad ? detail::grad_buf<T>(pC).data() : nullptr;
        const T* Cv = pC.val.v.data();

        std::vector<T> gh(static_cast<size_t>(D) * S, T(0));
        for (int t = L - 1; t >= 0; --t) {
            T dt = dv[t];
            const T* Bt = Bv + static_cast<size_t>(t) * S;
            const T* Ct = Cv + static_cast<size_t>(t) * S;
            T gdt = T(0);
            for (int d = 0; d < D; ++d) {
                size_t idx = (static_cast<size_t>(t) * D + d) * S;
                size_t pidx = idx - static_cast<size_t>(D) * S;
                const T* Ad = Av + static_cast<size_t>(d) * S;
                T gy = g[static_cast<size_t>(t) * D + d];
                T xtd = xv[static_cast<size_t>(t) * D + d];
                T* ghd = gh.data() + static_cast<size_t>(d) * S;
                T gxtd = T(0);
                for (int s = 0; s < S; ++s) {
                    T hv = (*h)[idx + s];
                    if (gC) gC[static_cast<size_t>(t) * S + s] += gy * hv;
                    T ghds = ghd[s] + gy * Ct[s];
                    T ab = (*abar)[idx + s];
                    T hprev = (t > 0) ? (*h)[pidx + s] : T(0);
                    if (gA) gA[static_cast<size_t>(d) * S + s] += ghds * hprev * dt * ab;
                    gdt += ghds * (hprev * Ad[s] * ab + Bt[s] * xtd);
                    if (gB) gB[static_cast<size_t>(t) * S + s] += ghds * dt * xtd;
                    gxtd += ghds * dt * Bt[s];
                    ghd[s] = ghds * ab;  // gradient carried to step t-1
                }
                if (gx) gx[static_cast<size_t>(t) * D + d] += gxtd;
            }
            if (gd) gd[t] += gdt;
        }
    };
    return detail::make_op<T>(std::move(out), {x, A, delta, B, C_in}, std::move(bp));
}

// ---- index map builders ---------------------------------------------------

inline IndexMap make_index_map(std::vector<int64_t> idx) {
    return std::make_shared<const std::vector<int64_t>>(std::move(idx));
}

// Reflective bottom/right padding of an HWC map to (H2, W2).
inline IndexMap reflect_pad_map(int H, int W, int C, int H2, int W2) {
    std::vector<int64_t> idx(static_cast<size_t>(H2) * W2 * C);
    auto reflect = [](int q, int n) { return q < n ? q : 2 * n - 2 - q; };
    size_t k = 0;
    for (int y = 0; y < H2; ++y) {
        int sy = reflect(y, H);
        for (int x = 0; x < W2; ++x) {
            int sx = reflect(x, W);
            int64_t base = (static_cast<int64_t>(sy) * W + sx) * C;
            for (int c = 0; c < C; ++c) idx[k++] = base + c;
        }
    }
    return make_index_map(std::move(idx));
}

// Top-left crop of an H2*W2*C map back to H*W*C.
inline IndexMap crop_map(int H2, int W2, int C, int H, int W) {
    std::vector<int64_t> idx(static_cast<size_t>(H) * W * C);
    size_t k = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int64_t base = (static_cast<int64_t>(y) * W2 + x) * C;
            for (int c = 0; c < C; ++c) idx[k++] = base + c;
        }
    return make_index_map(std::move(idx));
}

// {H,W,C} -> {dk, H*W} channel-token matrix for one attention head.
inline IndexMap channel_token_map(int H, int W, int C, int c0, int dk) {
    std::vector<int64_t> idx(static_cast<size_t>(dk) * H * W);
    size_t k = 0;
    for (int c = 0; c < dk; ++c)
        for (int p = 0; p < H * W; ++p) idx[k++] = static_cast<int64_t>(p) * C + c0 + c;
    return make_index_map(std::move(idx));
}

// {H,W,C} -> {H*W, dk} token-channel matrix (the transpose layout).
inline IndexMap token_channel_map(int H, int W, int C, int c0, int dk) {
    std::vector<int64_t> idx(static_cast<size_t>(dk) * H * W);
    size_t k = 0;
    for (int p = 0; p < H * W; ++p)
        for (int c = 0; c < dk; ++c) idx[k++] = static_cast<int64_t>(p) * C + c0 + c;
    return make_index_map(std::move(idx));
}

// {dk, H*W} head output back to spatial {H, W, dk}.
inline IndexMap head_to_spatial_map(int H, int W, int dk) {
    std::vector<int64_t> idx(static_cast<size_t>(dk) * H * W);
    size_t k = 0;
    for (int p = 0; p < H * W; ++p)
        for (int c = 0; c < dk; ++c) idx[k++] = static_cast<int64_t>(c) * H * W + p;
    return make_index_map(std::move(idx));
}

}  // namespace dime

#endif
