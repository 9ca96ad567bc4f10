// Unit tests for the autodiff core: value semantics, graph behaviour,
// and a finite-difference check for the backward pass of every op.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dime/core/nn_ops.hpp"
#include "dime/core/rng.hpp"
#include "dime/gradcheck.hpp"

using dime::Tensor;

namespace {

Tensor<double> randt(dime::Rng& r, std::vector<int> shape, double lo, double hi,
                     bool requires_grad = true) {
    dime::Array<double> a(std::move(shape));
    for (auto& v : a.v) v = r.uniform(lo, hi);
    return Tensor<double>(std::move(a), requires_grad);
}

using LossFn = std::function<Tensor<double>()>;

void expect_grad_ok(const char* name, const LossFn& fn,
                    std::vector<std::pair<std::string, Tensor<double>>> leaves,
                    double tol = 1e-6) {
    auto res = dime::check_gradients<double>(name, fn, std::move(leaves), 1e-5, tol);
    INFO(name << " max_rel_err=" << res.max_rel_err << " worst=" << res.worst_tensor << "["
              << res.worst_index << "]");
    CHECK(res.finite);
    CHECK(res.pass);
}

}  // namespace

TEST_CASE("scalar arithmetic and backward") {
    auto x = Tensor<double>::scalar(3.0, true);
    auto y = Tensor<double>::scalar(4.0, true);
    auto z = dime::add(dime::mul(x, y), x);  // x*y + x
    CHECK(z.item() == doctest::Approx(15.0));
    z.backward();
    CHECK(x.grad()[0] == doctest::Approx(5.0));  // y + 1
    CHECK(y.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("gradient accumulates across repeated backward") {
    auto x = Tensor<double>::scalar(2.0, true);
    auto z = dime::mul(x, x);
    z.backward();
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    auto z2 = dime::mul(x, x);
    z2.backward();
    CHECK(x.grad()[0] == doctest::Approx(8.0));
    x.zero_grad();
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("backward requires scalar output") {
    dime::Rng r(0);
    auto x = randt(r, {2, 2}, -1, 1);
    auto y = dime::mul(x, x);
    CHECK_THROWS_AS(y.backward(), dime::Error);
}

TEST_CASE("NoGradGuard prunes the graph") {
    dime::Rng r(0);
    auto x = randt(r, {4}, -1, 1);
    {
        dime::NoGradGuard ng;
        auto y = dime::mean_all(dime::mul(x, x));
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node()->parents.empty());
    }
    auto y = dime::mean_all(dime::mul(x, x));
    CHECK(y.requires_grad());
}

TEST_CASE("elementwise ops match finite differences") {
    dime::Rng r(42);
    auto a = randt(r, {3, 5}, -1.5, 1.5);
    auto b = randt(r, {3, 5}, 0.2, 1.7);

    expect_grad_ok("add", [&] { return dime::mean_all(dime::add(a, b)); }, {{"a", a}, {"b", b}});
    expect_grad_ok("sub", [&] { return dime::mean_all(dime::sub(a, b)); }, {{"a", a}, {"b", b}});
    expect_grad_ok("mul", [&] { return dime::mean_all(dime::mul(a, b)); }, {{"a", a}, {"b", b}});
    expect_grad_ok("div", [&] { return dime::mean_all(dime::div(a, b)); }, {{"a", a}, {"b", b}});
    expect_grad_ok("neg", [&] { return dime::mean_all(dime::neg(a)); }, {{"a", a}});
    expect_grad_ok("exp", [&] { return dime::mean_all(dime::exp_op(a)); }, {{"a", a}});
    expect_grad_ok("log", [&] { return dime::mean_all(dime::log_op(b)); }, {{"b", b}});
    expect_grad_ok("softplus", [&] { return dime::mean_all(dime::softplus(a)); }, {{"a", a}});
    expect_grad_ok("sigmoid", [&] { return dime::mean_all(dime::sigmoid(a)); }, {{"a", a}});
    expect_grad_ok("silu", [&] { return dime::mean_all(dime::silu(a)); }, {{"a", a}});
    expect_grad_ok("pow", [&] { return dime::mean_all(dime::pow_const(b, 0.37)); }, {{"b", b}});
    expect_grad_ok("affine", [&] { return dime::mean_all(dime::affine(a, 2.5, -0.3)); },
                   {{"a", a}});
}

TEST_CASE("abs and clamp_min subgradients away from kinks") {
    dime::Rng r(7);
    auto a = randt(r, {4, 4}, 0.1, 1.0);  // strictly positive, no kink crossing
    expect_grad_ok("abs", [&] { return dime::mean_all(dime::abs_op(a)); }, {{"a", a}});
    expect_grad_ok("clamp_min", [&] { return dime::mean_all(dime::clamp_min(a, 0.05)); },
                   {{"a", a}});
    // below the clamp the gradient is exactly zero
    auto lo = Tensor<double>::scalar(0.01, true);
    auto y = dime::mean_all(dime::clamp_min(lo, 0.05));
    y.backward();
    CHECK(lo.grad()[0] == 0.0);
}

TEST_CASE("scalar broadcast ops match finite differences") {
    dime::Rng r(3);
    auto x = randt(r, {2, 3}, -1, 1);
    auto s = Tensor<double>::scalar(0.7, true);
    expect_grad_ok("mul_scalar", [&] { return dime::mean_all(dime::mul_scalar(x, s)); },
                   {{"x", x}, {"s", s}});
    expect_grad_ok("add_scalar", [&] { return dime::mean_all(dime::add_scalar(x, s)); },
                   {{"x", x}, {"s", s}});
}

TEST_CASE("reductions match finite differences") {
    dime::Rng r(11);
    auto x = randt(r, {3, 2, 4}, -1, 1);
    auto w = randt(r, {3, 2, 1}, -1, 1);
    auto u = randt(r, {1, 4}, -1, 1);
    expect_grad_ok("sum_all", [&] { return dime::sum_all(dime::mul(x, x)); }, {{"x", x}});
    expect_grad_ok("mean_over_channels",
                   [&] { return dime::mean_all(dime::mul(dime::mean_over_channels(x), w)); },
                   {{"x", x}, {"w", w}});
    expect_grad_ok("channel_means",
                   [&] { return dime::mean_all(dime::mul(dime::channel_means(x), u)); },
                   {{"x", x}, {"u", u}});
}

TEST_CASE("movement ops match finite differences") {
    dime::Rng r(13);
    auto x = randt(r, {2, 3, 2}, -1, 1);
    auto y = randt(r, {2, 3, 3}, -1, 1);

    expect_grad_ok("reshape", [&] {
        return dime::mean_all(dime::mul(dime::reshape(x, {6, 2}), dime::reshape(x, {6, 2})));
    }, {{"x", x}});

    // arbitrary injective gather: reverse all elements
    std::vector<int64_t> rev(static_cast<size_t>(x.numel()));
    for (size_t i = 0; i < rev.size(); ++i) rev[i] = static_cast<int64_t>(rev.size() - 1 - i);
    auto map = dime::make_index_map(std::move(rev));
    expect_grad_ok("gather_map", [&] {
        auto g = dime::gather_map(x, map, {12});
        return dime::mean_all(dime::mul(g, g));
    }, {{"x", x}});

    // scatter two entries into a 5-slot vector
    auto small = randt(r, {2}, -1, 1);
    auto smap = dime::make_index_map({4, 1});
    expect_grad_ok("scatter_map", [&] {
        auto sc = dime::scatter_map(small, smap, {5});
        return dime::mean_all(dime::mul(sc, sc));
    }, {{"small", small}});

    expect_grad_ok("concat_channels", [&] {
        auto c = dime::concat_channels<double>({x, y});
        return dime::mean_all(dime::mul(c, c));
    }, {{"x", x}, {"y", y}});
}

TEST_CASE("gather/scatter with inverse maps is the identity") {
    dime::Rng r(5);
    auto x = randt(r, {3, 4}, -1, 1, false);
    std::vector<int64_t> perm = {5, 2, 7, 0, 11, 3, 9, 1, 10, 4, 6, 8};
    auto fwd = dime::make_index_map(std::vector<int64_t>(perm));
    auto g = dime::gather_map(x, fwd, {12});
    auto back = dime::scatter_map(g, fwd, {12});
    for (int i = 0; i < 12; ++i) CHECK(back.value().v[i] == x.value().v[i]);
}

TEST_CASE("matmul and softmax match finite differences") {
    dime::Rng r(17);
    auto a = randt(r, {3, 4}, -1, 1);
    auto b = randt(r, {4, 2}, -1, 1);
    expect_grad_ok("matmul", [&] { return dime::mean_all(dime::matmul(a, b)); },
                   {{"a", a}, {"b", b}});

    auto z = randt(r, {3, 5}, -2, 2);
    auto wmask = randt(r, {3, 5}, -1, 1, false);
    expect_grad_ok("softmax_rows", [&] {
        return dime::mean_all(dime::mul(dime::softmax_rows(z), wmask));
    }, {{"z", z}});

    auto sm = dime::softmax_rows(z);
    for (int i = 0; i < 3; ++i) {
        double s = 0;
        for (int j = 0; j < 5; ++j) s += sm.value().at(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("conv2d matches finite differences") {
    dime::Rng r(19);
    auto x = randt(r, {5, 6, 3}, -1, 1);
    auto w = randt(r, {3, 3, 3, 4}, -0.5, 0.5);
    auto b = randt(r, {4}, -0.5, 0.5);
    auto proj = randt(r, {5, 6, 4}, -1, 1, false);
    expect_grad_ok("conv2d_s1", [&] {
        return dime::mean_all(dime::mul(dime::conv2d(x, w, b, 1, 1), proj));
    }, {{"x", x}, {"w", w}, {"b", b}});

    auto proj2 = randt(r, {3, 3, 4}, -1, 1, false);
    expect_grad_ok("conv2d_s2", [&] {
        return dime::mean_all(dime::mul(dime::conv2d(x, w, b, 2, 1), proj2));
    }, {{"x", x}, {"w", w}, {"b", b}});

    // 1x1 conv without bias
    auto w1 = randt(r, {1, 1, 3, 2}, -0.5, 0.5);
    expect_grad_ok("conv2d_1x1", [&] {
        return dime::mean_all(dime::conv2d(x, w1, Tensor<double>(), 1, 0));
    }, {{"x", x}, {"w1", w1}});
}

TEST_CASE("dwconv2d matches finite differences") {
    dime::Rng r(23);
    auto x = randt(r, {5, 5, 4}, -1, 1);
    auto w = randt(r, {3, 3, 4}, -0.5, 0.5);
    auto b = randt(r, {4}, -0.2, 0.2);
    auto proj = randt(r, {5, 5, 4}, -1, 1, false);
    expect_grad_ok("dwconv2d", [&] {
        return dime::mean_all(dime::mul(dime::dwconv2d(x, w, b, 1, 1), proj));
    }, {{"x", x}, {"w", w}, {"b", b}});
}

TEST_CASE("upsample_nearest_2x matches finite differences and values") {
    dime::Rng r(29);
    auto x = randt(r, {2, 3, 2}, -1, 1);
    auto up = dime::upsample_nearest_2x(x);
    CHECK(up.shape() == std::vector<int>{4, 6, 2});
    CHECK(up.value().at(0, 0, 0) == x.value().at(0, 0, 0));
    CHECK(up.value().at(1, 1, 1) == x.value().at(0, 0, 1));
    CHECK(up.value().at(3, 5, 0) == x.value().at(1, 2, 0));
    auto proj = randt(r, {4, 6, 2}, -1, 1, false);
    expect_grad_ok("upsample", [&] {
        return dime::mean_all(dime::mul(dime::upsample_nearest_2x(x), proj));
    }, {{"x", x}});
}

TEST_CASE("layer_norm_channels matches finite differences") {
    dime::Rng r(31);
    auto x = randt(r, {3, 3, 6}, -1, 1);
    auto gamma = randt(r, {6}, 0.5, 1.5);
    auto beta = randt(r, {6}, -0.3, 0.3);
    auto proj = randt(r, {3, 3, 6}, -1, 1, false);
    expect_grad_ok("layer_norm", [&] {
        return dime::mean_all(dime::mul(dime::layer_norm_channels(x, gamma, beta), proj));
    }, {{"x", x}, {"gamma", gamma}, {"beta", beta}}, 1e-5);
}

TEST_CASE("s6_core matches finite differences") {
    dime::Rng r(37);
    const int L = 5, D = 3, S = 2;
    auto x = randt(r, {L, D}, -1, 1);
    auto A = randt(r, {D, S}, -1.5, -0.2);
    auto delta = randt(r, {L}, 0.05, 0.4);
    auto B = randt(r, {L, S}, -1, 1);
    auto C = randt(r, {L, S}, -1, 1);
    auto proj = randt(r, {L, D}, -1, 1, false);
    expect_grad_ok("s6_core", [&] {
        return dime::mean_all(dime::mul(dime::s6_core(x, A, delta, B, C), proj));
    }, {{"x", x}, {"A", A}, {"delta", delta}, {"B", B}, {"C", C}}, 1e-5);
}

TEST_CASE("s6_core single step has no recurrence") {
    // y_1 = C_1 . (delta * B_1 * x_1) per channel
    auto x = Tensor<double>(dime::Array<double>({1, 2}, {0.5, -0.3}), false);
    auto A = Tensor<double>(dime::Array<double>({2, 2}, {-1, -2, -3, -4}), false);
    auto delta = Tensor<double>(dime::Array<double>({1}, {0.7}), false);
    auto B = Tensor<double>(dime::Array<double>({1, 2}, {0.2, -0.4}), false);
    auto C = Tensor<double>(dime::Array<double>({1, 2}, {1.5, 0.25}), false);
    auto y = dime::s6_core(x, A, delta, B, C);
    for (int d = 0; d < 2; ++d) {
        double expect = 0;
        for (int s = 0; s < 2; ++s)
            expect += C.value().at(0, s) * (0.7 * B.value().at(0, s) * x.value().at(0, d));
        CHECK(y.value().at(0, d) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("s6_core with zero transition is a cumulative sum") {
    dime::Rng r(41);
    const int L = 4, D = 2, S = 3;
    auto x = randt(r, {L, D}, -1, 1, false);
    auto A = Tensor<double>(dime::Array<double>({D, S}, 0.0), false);
    auto delta = Tensor<double>(dime::Array<double>({L}, 1.0), false);
    auto B = randt(r, {L, S}, -1, 1, false);
    auto C = randt(r, {L, S}, -1, 1, false);
    auto y = dime::s6_core(x, A, delta, B, C);
    for (int d = 0; d < D; ++d) {
        std::vector<double> h(S, 0.0);
        for (int t = 0; t < L; ++t) {
            double yt = 0;
            for (int s = 0; s < S; ++s) {
                h[s] += B.value().at(t, s) * x.value().at(t, d);  // abar == 1
                yt += C.value().at(t, s) * h[s];
            }
            CHECK(y.value().at(t, d) == doctest::Approx(yt).epsilon(1e-12));
        }
    }
}

TEST_CASE("reflect pad and crop maps invert each other") {
    dime::Rng r(43);
    auto x = randt(r, {5, 7, 2}, 0, 1, false);
    auto pmap = dime::reflect_pad_map(5, 7, 2, 8, 8);
    auto padded = dime::gather_map(x, pmap, {8, 8, 2});
    // reflected row 5 should mirror row 3
    CHECK(padded.value().at(5, 0, 0) == x.value().at(3, 0, 0));
    CHECK(padded.value().at(0, 7, 1) == x.value().at(0, 5, 1));
    auto cmap = dime::crop_map(8, 8, 2, 5, 7);
    auto back = dime::gather_map(padded, cmap, {5, 7, 2});
    for (size_t i = 0; i < back.value().v.size(); ++i) CHECK(back.value().v[i] == x.value().v[i]);
}
