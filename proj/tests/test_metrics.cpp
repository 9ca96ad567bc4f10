#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dime/core/rng.hpp"
#include "dime/gradcheck.hpp"
#include "dime/metrics.hpp"

using dime::Array;

namespace {

Array<float> random_arr(dime::Rng& rng, int H, int W, double lo = 0.0, double hi = 1.0) {
    Array<float> a({H, W, 3});
    for (auto& v : a.v) v = static_cast<float>(rng.uniform(lo, hi));
    return a;
}

// Plain scalar-loop SSIM reference: explicit window sums, no tensor ops.
// Kept fully independent of metrics.hpp internals.
double ssim_reference(const Array<float>& a, const Array<float>& b) {
    const int H = a.shape[0], W = a.shape[1], C = a.shape[2];
    const int win = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    double wsum = 0.0;
    double wk[11][11];
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            double d2 = (y - 5.0) * (y - 5.0) + (x - 5.0) * (x - 5.0);
            wk[y][x] = std::exp(-d2 / (2 * sigma * sigma));
            wsum += wk[y][x];
        }
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) wk[y][x] /= wsum;

    double total = 0.0;
    int count = 0;
    for (int c = 0; c < C; ++c) {
        for (int oy = 0; oy + win <= H; ++oy) {
            for (int ox = 0; ox + win <= W; ++ox) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int y = 0; y < win; ++y)
                    for (int x = 0; x < win; ++x) {
                        double av = a.at(oy + y, ox + x, c);
                        double bv = b.at(oy + y, ox + x, c);
                        ma += wk[y][x] * av;
                        mb += wk[y][x] * bv;
                        saa += wk[y][x] * av * av;
                        sbb += wk[y][x] * bv * bv;
                        sab += wk[y][x] * av * bv;
                    }
                double va = saa - ma * ma, vb = sbb - mb * mb, cab = sab - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cab + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
    }
    return total / count;
}

}  // namespace

TEST_CASE("psnr formula and cap") {
    dime::Rng rng(1);
    auto a = random_arr(rng, 12, 12);
    CHECK(dime::psnr(a, a) == 99.0);

    // constant offset of 0.1: MSE = 0.01 -> 20 dB
    Array<float> zeros({16, 16, 3}, 0.0f);
    Array<float> tenth({16, 16, 3}, 0.1f);
    CHECK(dime::psnr(zeros, tenth) == doctest::Approx(20.0).epsilon(1e-6));

    Array<float> ones({16, 16, 3}, 1.0f);
    CHECK(dime::psnr(zeros, ones) == doctest::Approx(0.0).epsilon(1e-9));

    auto b = random_arr(rng, 12, 12);
    CHECK(dime::psnr(a, b) == doctest::Approx(dime::psnr(b, a)));
    Array<float> other({12, 13, 3}, 0.0f);
    CHECK_THROWS_AS(dime::psnr(a, other), dime::ShapeError);
}

TEST_CASE("ssim self-similarity is exactly one") {
    dime::Rng rng(3);
    auto a = random_arr(rng, 16, 20);
    CHECK(dime::ssim(a, a) == 1.0);
}

TEST_CASE("ssim of constant 0 vs constant 1 matches the closed form") {
    Array<float> zeros({16, 16, 3}, 0.0f);
    Array<float> ones({16, 16, 3}, 1.0f);
    double expect = 1e-4 / (1.0 + 1e-4);
    CHECK(dime::ssim(zeros, ones) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("ssim matches the scalar-loop reference") {
    dime::Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = random_arr(rng, 16, 16);
        auto b = random_arr(rng, 16, 16);
        double got = dime::ssim(a, b);
        double ref = ssim_reference(a, b);
        CHECK(std::abs(got - ref) < 1e-6);
        CHECK(dime::ssim(b, a) == doctest::Approx(got).epsilon(1e-12));
        CHECK(got >= -1.0);
        CHECK(got <= 1.0);
    }
}

TEST_CASE("ssim of correlated pairs stays in (0, 1]") {
    // A degraded/clean pair keeps positive covariance; independent noise
    // fields do not, so the positivity property is checked here.
    dime::Rng rng(29);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = random_arr(rng, 16, 16, 0.2, 0.9);
        Array<float> b = a;
        for (auto& v : b.v)
            v = std::clamp(v * 0.5f + static_cast<float>(rng.uniform(-0.02, 0.02)), 0.0f, 1.0f);
        double s = dime::ssim(a, b);
        CHECK(s > 0.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("ssim rejects images smaller than its window") {
    Array<float> tiny({8, 8, 3}, 0.5f);
    CHECK_THROWS_AS(dime::ssim(tiny, tiny), dime::ShapeError);
    Array<float> a({16, 16, 3}, 0.5f), b({16, 12, 3}, 0.5f);
    CHECK_THROWS_AS(dime::ssim(a, b), dime::ShapeError);
}

TEST_CASE("gradient of 1 - ssim matches finite differences") {
    dime::Rng rng(23);
    dime::Array<double> av({12, 12, 3}), bv({12, 12, 3});
    for (auto& v : av.v) v = rng.uniform(0.05, 0.95);
    for (auto& v : bv.v) v = rng.uniform(0.05, 0.95);
    dime::Tensor<double> a(std::move(av), true);
    dime::Tensor<double> b(std::move(bv), false);
    auto res = dime::check_gradients<double>(
        "ssim_loss",
        [&] { return dime::affine(dime::ssim_index(a, b), -1.0, 1.0); },
        {{"a", a}}, 1e-5, 1e-4);
    INFO("max_rel_err=" << res.max_rel_err);
    CHECK(res.pass);
}
