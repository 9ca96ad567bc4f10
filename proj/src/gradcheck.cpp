// The 64-bit gradient-verification suite behind `dime gradcheck` (and the
// first acceptance criterion). Every fragment builds a small double-precision
// instance with fully randomized parameters -- zero-initialized heads would
// otherwise mask upstream gradients -- and compares backward() against
// central finite differences over every parameter and input element.
#include "dime/gradcheck.hpp"

#include "dime/dscam.hpp"
#include "dime/training.hpp"

namespace dime {
namespace {

using T = double;
using Params = std::vector<std::pair<std::string, Tensor<T>>>;

Tensor<T> randt(Rng& r, std::vector<int> shape, double lo, double hi, bool requires_grad = false) {
    Array<T> a(std::move(shape));
    for (auto& v : a.v) v = r.uniform(lo, hi);
    return Tensor<T>(std::move(a), requires_grad);
}

void randomize(Params& params, Rng& r, double scale = 0.3) {
    for (auto& [name, p] : params) {
        bool is_ln_gain = name.find("ln") != std::string::npos && name.ends_with(".g");
        bool is_A = name.ends_with("A");
        for (auto& v : p.mutable_value().v) {
            if (is_ln_gain)
                v = r.uniform(0.8, 1.2);
            else if (is_A)
                v = r.uniform(-1.5, -0.1);
            else
                v = r.uniform(-scale, scale);
        }
    }
}

GradcheckResult check_scurve(double h, double tol) {
    Rng r(101);
    auto img = randt(r, {6, 6, 3}, 0.02, 0.98, true);
    auto proj = randt(r, {6, 6, 3}, -1, 1);
    auto n_var = Tensor<T>(Array<T>({1}, {0.7}), true);
    return check_gradients<T>(
        "scurve_apply",
        [&] {
            auto a = scurve_apply(img, SCurveExpert(0.2, 0.5));
            auto b = scurve_apply(img, SCurveExpert(2.4, 0.5));
            auto c = scurve_apply_learnable(img, n_var, 0.5);
            return mean_all(mul(add(add(a, b), c), proj));
        },
        {{"img", img}, {"n", n_var}}, h, tol);
}

GradcheckResult check_gate(double h, double tol) {
    Rng r(103);
    auto w_g = randt(r, {3, 8}, -1, 1, true);
    auto w_noise = randt(r, {3, 8}, -1, 1, true);
    auto i_star = Tensor<T>(Array<T>({1, 3}, {0.31, 0.56, 0.77}), true);
    auto proj = randt(r, {8}, -1, 1);
    return check_gradients<T>(
        "gate_noise_off",
        [&] {
            auto g = noisy_topk_gate(i_star, w_g, w_noise, 3, nullptr);
            return sum_all(mul(g.weights, proj));
        },
        {{"w_g", w_g}, {"w_noise", w_noise}, {"i_star", i_star}}, h, tol);
}

GradcheckResult check_moe(double h, double tol) {
    Rng r(107);
    auto img = randt(r, {5, 5, 3}, 0.02, 0.98, true);
    auto w_g = randt(r, {3, 4}, -1, 1, true);
    auto w_noise = Tensor<T>(Array<T>({3, 4}, 0.0), false);
    auto i_star = Tensor<T>(Array<T>({1, 3}, {0.42, 0.18, 0.66}), true);
    auto proj = randt(r, {5, 5, 3}, -1, 1);
    std::vector<SCurveExpert> experts;
    for (double n : default_n_values(4)) experts.emplace_back(n, 0.5);
    return check_gradients<T>(
        "moe_combine",
        [&] {
            auto g = noisy_topk_gate(i_star, w_g, w_noise, 2, nullptr);
            return mean_all(mul(moe_combine(img, g, experts), proj));
        },
        {{"img", img}, {"w_g", w_g}, {"i_star", i_star}}, h, tol);
}

GradcheckResult check_iaca(double h, double tol) {
    Rng init(109);
    Iaca<T> iaca(8, 2, init);
    Params params;
    iaca.collect_params("iaca.", params);
    Rng pr(113);
    randomize(params, pr);
    Rng r(127);
    auto f_enc = randt(r, {4, 4, 8}, -1, 1, true);
    auto l_feat = randt(r, {4, 4, 8}, -1, 1, true);
    auto proj = randt(r, {4, 4, 8}, -1, 1);
    Params leaves = params;
    leaves.emplace_back("f_enc", f_enc);
    leaves.emplace_back("l_feat", l_feat);
    return check_gradients<T>(
        "iaca_forward",
        [&] { return mean_all(mul(iaca.forward(f_enc, l_feat), proj)); }, leaves, h, tol);
}

GradcheckResult check_s6(double h, double tol) {
    Rng init(131);
    S6Block<T> blk(4, 3, init);
    Params params;
    blk.collect_params("s6.", params);
    Rng r(137);
    auto x = randt(r, {8, 4}, -1, 1, true);
    auto proj = randt(r, {8, 4}, -1, 1);
    Params leaves = params;
    leaves.emplace_back("x", x);
    return check_gradients<T>(
        "s6_scan", [&] { return mean_all(mul(blk.forward(x), proj)); }, leaves, h, tol);
}

GradcheckResult check_dscam(double h, double tol) {
    Rng init(139);
    Dscam<T>::Config cfg;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.d_state = 3;
    Dscam<T> blk(cfg, init);
    Params params;
    blk.collect_params("dscam.", params);
    Rng pr(149);
    randomize(params, pr);
    Rng r(151);
    auto f_enc = randt(r, {4, 4, 8}, -1, 1, true);
    auto l_feat = randt(r, {4, 4, 8}, -1, 1, true);
    auto proj = randt(r, {4, 4, 8}, -1, 1);
    Params leaves = params;
    leaves.emplace_back("f_enc", f_enc);
    leaves.emplace_back("l_feat", l_feat);
    return check_gradients<T>(
        "dscam_forward",
        [&] { return mean_all(mul(blk.forward(f_enc, l_feat), proj)); }, leaves, h, tol);
}

GradcheckResult check_restore(double h, double tol) {
    Rng init(157);
    Restorer<T>::Config cfg;
    cfg.base_channels = 4;
    cfg.depth = 2;
    cfg.dscam_blocks = 1;
    cfg.feat_channels = 4;
    cfg.heads = 2;
    cfg.d_state = 3;
    Restorer<T> net(cfg, init);
    Params params;
    net.collect_params("restorer.", params);
    Rng pr(163);
    randomize(params, pr);
    Rng r(167);
    auto lit = randt(r, {16, 16, 3}, 0.0, 1.2, true);
    auto lf = randt(r, {16, 16, 4}, -1, 1, true);
    auto proj = randt(r, {16, 16, 3}, -1, 1);
    Params leaves = params;
    leaves.emplace_back("lit", lit);
    leaves.emplace_back("l_feat", lf);
    return check_gradients<T>(
        "restore", [&] { return mean_all(mul(net.forward(lit, lf), proj)); }, leaves, h, tol);
}

GradcheckResult check_ssim(double h, double tol) {
    Rng r(173);
    auto a = randt(r, {12, 12, 3}, 0.05, 0.95, true);
    auto b = randt(r, {12, 12, 3}, 0.05, 0.95, true);
    return check_gradients<T>(
        "ssim_loss", [&] { return affine(ssim_index(a, b), -1.0, 1.0); },
        {{"a", a}, {"b", b}}, h, tol);
}

GradcheckResult check_full_loss(double h, double tol) {
    DimeNet<T>::Config cfg;
    cfg.moe.num_experts = 4;
    cfg.moe.k = 2;
    cfg.moe.feat_channels = 4;
    cfg.moe.noise = false;
    cfg.restorer.base_channels = 4;
    cfg.restorer.depth = 2;
    cfg.restorer.dscam_blocks = 1;
    cfg.restorer.heads = 2;
    cfg.restorer.d_state = 3;
    cfg.init_seed = 179;
    DimeNet<T> model(cfg);
    Params params = model.named_params();
    Rng pr(181);
    randomize(params, pr, 0.2);

    Rng r(191);
    auto img = randt(r, {16, 16, 3}, 0.05, 0.95, true);
    auto target = randt(r, {16, 16, 3}, 0.05, 0.95);
    PerceptualProxy<T> phi;
    LossWeights w;
    Params leaves = params;
    leaves.emplace_back("img", img);
    return check_gradients<T>(
        "full_model_loss",
        [&] {
            auto fwd = model.forward(img, nullptr);
            return compute_loss(fwd.pred, target, w, phi).total;
        },
        leaves, h, tol);
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(double h, double tol) {
    std::vector<GradcheckResult> out;
    out.push_back(check_scurve(h, tol));
    out.push_back(check_gate(h, tol));
    out.push_back(check_moe(h, tol));
    out.push_back(check_iaca(h, tol));
    out.push_back(check_s6(h, tol));
    out.push_back(check_dscam(h, tol));
    out.push_back(check_restore(h, tol));
    out.push_back(check_ssim(h, tol));
    out.push_back(check_full_loss(h, tol));
    return out;
}

}  // namespace dime
