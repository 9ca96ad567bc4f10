#ifndef DIME_METRICS_HPP
#define DIME_METRICS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "dime/core/nn_ops.hpp"

namespace dime {

// 10*log10(peak^2 / MSE), capped at 99 dB for identical images.
double psnr(const Array<float>& a, const Array<float>& b, double peak = 1.0);

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1. Valid-region windows only (no padding), averaged over
// channels and positions. Double-precision evaluation convenience.
double ssim(const Array<float>& a, const Array<float>& b);

namespace detail {
template <typename T>
std::vector<T> gaussian_window(int size, double sigma) {
    std::vector<T> w(static_cast<size_t>(size) * size);
    double half = (size - 1) / 2.0;
    double total = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double d2 = (y - half) * (y - half) + (x - half) * (x - half);
            double g = std::exp(-d2 / (2.0 * sigma * sigma));
            w[static_cast<size_t>(y) * size + x] = static_cast<T>(g);
            total += g;
        }
    for (auto& v : w) v = static_cast<T>(static_cast<double>(v) / total);
    return w;
}
}  // namespace detail

// Differentiable mean SSIM between two H*W*C tensors (used inside the
// training loss as 1 - ssim_index).
template <typename T>
Tensor<T> ssim_index(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch");
    if (a.shape().size() != 3) throw ShapeError("ssim: expected H*W*C");
    const int H = a.shape()[0], W = a.shape()[1], C = a.shape()[2];
    const int win = 11;
    if (H < win || W < win) throw ShapeError("ssim: image smaller than 11x11 window");

    auto g = detail::gaussian_window<T>(win, 1.5);
    Array<T> wk({win, win, C});
    for (int i = 0; i < win * win; ++i)
        for (int c = 0; c < C; ++c) wk.v[static_cast<size_t>(i) * C + c] = g[static_cast<size_t>(i)];
    Tensor<T> w(std::move(wk), false);
    Tensor<T> none;

    const T c1 = T(0.01 * 0.01);
    const T c2 = T(0.03 * 0.03);

    auto mu_a = dwconv2d(a, w, none);
    auto mu_b = dwconv2d(b, w, none);
    auto mu_aa = mul(mu_a, mu_a);
    auto mu_bb = mul(mu_b, mu_b);
    auto mu_ab = mul(mu_a, mu_b);
    auto var_a = sub(dwconv2d(mul(a, a), w, none), mu_aa);
    auto var_b = sub(dwconv2d(mul(b, b), w, none), mu_bb);
    auto cov = sub(dwconv2d(mul(a, b), w, none), mu_ab);

    auto num = mul(affine(mu_ab, T(2), c1), affine(cov, T(2), c2));
    auto den = mul(affine(add(mu_aa, mu_bb), T(1), c1), affine(add(var_a, var_b), T(1), c2));
    return mean_all(div(num, den));
}

struct MetricEntry {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct MetricReport {
    std::vector<MetricEntry> entries;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    void add(std::string name, double p, double s);
};

}  // namespace dime

#endif
