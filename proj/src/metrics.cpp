#include "dime/metrics.hpp"

#include "dime/core/errors.hpp"

namespace dime {

double psnr(const Array<float>& a, const Array<float>& b, double peak) {
    if (a.shape != b.shape) throw ShapeError("psnr: shape mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.v.size());
    if (mse == 0.0) return 99.0;
    double v = 10.0 * std::log10(peak * peak / mse);
    return std::min(v, 99.0);
}

double ssim(const Array<float>& a, const Array<float>& b) {
    NoGradGuard ng;
    Tensor<double> ta(a.cast<double>(), false);
    Tensor<double> tb(b.cast<double>(), false);
    return ssim_index(ta, tb).item();
}

void MetricReport::add(std::string name, double p, double s) {
    entries.push_back({std::move(name), p, s});
    double sp = 0, ss = 0;
    for (const auto& e : entries) {
        sp += e.psnr;
        ss += e.ssim;
    }
    mean_psnr = sp / static_cast<double>(entries.size());
    mean_ssim = ss / static_cast<double>(entries.size());
}

}  // namespace dime
