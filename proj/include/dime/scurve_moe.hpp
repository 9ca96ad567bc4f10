#ifndef DIME_SCURVE_MOE_HPP
#define DIME_SCURVE_MOE_HPP

#include <algorithm>
#include <numeric>

#include "dime/core/nn_ops.hpp"
#include "dime/core/rng.hpp"

namespace dime {

// One tone-curve expert: I -> I^n / (I^n + sigma^n). n < 1 lifts dark
// regions, n > 1 compresses highlights.
struct SCurveExpert {
    double n;
    double sigma;

    SCurveExpert(double n_, double sigma_) : n(n_), sigma(sigma_) {
        if (!(n > 0.0)) throw ConfigError("SCurveExpert: n must be positive");
        if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError("SCurveExpert: sigma must be in (0,1)");
    }
};

// Geometric spacing over [lo, hi], log-symmetric about 1 when hi == 1/lo
// (half the bank below 1, half above).
inline std::vector<double> default_n_values(int count = 16, double lo = 0.2, double hi = 5.0) {
    std::vector<double> out(static_cast<size_t>(count));
    double step = std::log(hi / lo) / (count - 1);
    for (int i = 0; i < count; ++i) out[static_cast<size_t>(i)] = lo * std::exp(step * i);
    return out;
}

namespace detail {

// Fused curve evaluation. Forward uses the raw base so f(0) = 0 exactly;
// the backward pass clamps the base at 1e-12 to keep gradients finite for
// n < 1. Optional 0-d tensor exponent for the learnable-n mode.
template <typename T>
Tensor<T> scurve_op(const Tensor<T>& img, const Tensor<T>& n_var, T n_const, T sigma) {
    const bool learn = n_var.defined();
    const T n = learn ? n_var.item() : n_const;
    const T s = std::pow(sigma, n);
    Array<T> out(img.shape());
    const auto& iv = img.value().v;
    for (size_t i = 0; i < iv.size(); ++i) {
        T t = std::pow(std::max(iv[i], T(0)), n);
        out.v[i] = t / (t + s);
    }
    std::vector<Tensor<T>> parents = learn ? std::vector<Tensor<T>>{img, n_var}
                                           : std::vector<Tensor<T>>{img};
    auto bp = [n, s, sigma, learn](typename Tensor<T>::Node& self) {
        auto& pi = *self.parents[0];
        const auto& iv = pi.val.v;
        T* gi = pi.requires_grad ? grad_buf<T>(pi).data() : nullptr;
        T* gn = nullptr;
        if (learn && self.parents[1]->requires_grad) gn = grad_buf<T>(*self.parents[1]).data();
        if (!gi && !gn) return;
        T gn_acc = T(0);
        for (size_t i = 0; i < iv.size(); ++i) {
            T ic = std::max(iv[i], T(1e-12));
            T t = std::pow(ic, n);
            T denom = (t + s) * (t + s);
            if (gi) gi[i] += self.grad[i] * n * std::pow(ic, n - T(1)) * s / denom;
            if (gn) gn_acc += self.grad[i] * t * s * (std::log(ic) - std::log(sigma)) / denom;
        }
        if (gn) gn[0] += gn_acc;
    };
    return make_op<T>(std::move(out), std::move(parents), std::move(bp));
}

}  // namespace detail

template <typename T>
Tensor<T> scurve_apply(const Tensor<T>& img, const SCurveExpert& expert) {
    return detail::scurve_op(img, Tensor<T>(), static_cast<T>(expert.n),
                             static_cast<T>(expert.sigma));
}

template <typename T>
Tensor<T> scurve_apply_learnable(const Tensor<T>& img, const Tensor<T>& n, double sigma) {
    return detail::scurve_op(img, n, T(0), static_cast<T>(sigma));
}

// Sparse gate output: a dense weight vector with exactly |selected|
// nonzeros that sum to 1, plus the raw (post-noise) scores.
template <typename T>
struct GateResult {
    Tensor<T> weights;          // {E}
    std::vector<int> selected;  // ascending expert indices, |selected| == k
    std::vector<T> scores;      // H(I*), detached
};

// Noisy top-k gating: H_i = (i_star . W_g)_i + eps_i * softplus((i_star .
// W_noise)_i), eps ~ N(0,1) only when a noise stream is supplied. The
// non-top-k entries are masked out before the softmax; ties keep the
// lower expert index.
template <typename T>
GateResult<T> noisy_topk_gate(const Tensor<T>& i_star, const Tensor<T>& w_g,
                              const Tensor<T>& w_noise, int k, Rng* noise_rng) {
    const int E = w_g.shape()[1];
    if (k < 1 || k > E) throw ConfigError("gate: k must be in [1, num_experts]");
    Tensor<T> h = matmul(i_star, w_g);  // {1, E}
    if (noise_rng) {
        Array<T> eps({1, E});
        for (auto& e : eps.v) e = static_cast<T>(noise_rng->normal());
        Tensor<T> noise_mag = softplus(matmul(i_star, w_noise));
        h = add(h, mul(Tensor<T>(std::move(eps), false), noise_mag));
    }

    GateResult<T> out;
    out.scores.assign(h.value().v.begin(), h.value().v.end());

    std::vector<int> idx(static_cast<size_t>(E));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (out.scores[static_cast<size_t>(a)] != out.scores[static_cast<size_t>(b)])
            return out.scores[static_cast<size_t>(a)] > out.scores[static_cast<size_t>(b)];
        return a < b;
    });
    out.selected.assign(idx.begin(), idx.begin() + k);
    std::sort(out.selected.begin(), out.selected.end());

    std::vector<int64_t> sel64(out.selected.begin(), out.selected.end());
    auto map = make_index_map(std::move(sel64));
    Tensor<T> picked = gather_map(reshape(h, {E}), map, {k});
    Tensor<T> soft = reshape(softmax_rows(reshape(picked, {1, k})), {k});
    out.weights = scatter_map(soft, map, {E});
    return out;
}

// Weighted sum of the selected experts only; experts with zero gate
// weight are never evaluated (the counter observes this contract).
template <typename T>
Tensor<T> moe_combine(const Tensor<T>& img, const GateResult<T>& gate,
                      const std::vector<SCurveExpert>& experts,
                      const Tensor<std::type_identity_t<T>>* learnable_n = nullptr,
                      int64_t* eval_counter = nullptr) {
    const int E = static_cast<int>(experts.size());
    if (gate.weights.shape() != std::vector<int>{E})
        throw ShapeError("moe_combine: gate/expert count mismatch");
    Tensor<T> acc;
    for (int j : gate.selected) {
        if (gate.weights.value().v[static_cast<size_t>(j)] == T(0)) continue;
        auto wj = gather_map(gate.weights, make_index_map({j}), {1});
        Tensor<T> expert_out;
        if (learnable_n) {
            auto nj = gather_map(*learnable_n, make_index_map({j}), {1});
            expert_out = scurve_apply_learnable(img, nj, experts[static_cast<size_t>(j)].sigma);
        } else {
            expert_out = scurve_apply(img, experts[static_cast<size_t>(j)]);
        }
        if (eval_counter) ++*eval_counter;
        Tensor<T> term = mul_scalar(expert_out, wj);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

// The illumination estimator: S-curve MoE plus a small convolutional head
// producing the compensation map L_bar and illumination features L_feat.
// At init the head is zeroed with softplus^-1(1) bias, so L_bar == 1 and
// the whole pipeline starts as the identity.
template <typename T>
class MoeEstimator {
public:
    struct Config {
        int num_experts = 16;
        int k = 4;
        std::vector<double> n_values;  // empty -> default_n_values()
        double sigma = 0.5;
        bool noise = true;  // gating noise active during training
        bool learnable_n = false;
        int feat_channels = 16;  // C_l
    };

    struct Output {
        Tensor<T> l_bar;   // {H, W, 3}, strictly positive
        Tensor<T> l_feat;  // {H, W, C_l}
        GateResult<T> gate;
    };

    MoeEstimator(const Config& cfg, Rng& init) : cfg_(cfg) {
        if (cfg_.k < 1 || cfg_.k > cfg_.num_experts)
            throw ConfigError("moe: k must be in [1, num_experts]");
        std::vector<double> ns =
            cfg_.n_values.empty() ? default_n_values(cfg_.num_experts) : cfg_.n_values;
        if (static_cast<int>(ns.size()) != cfg_.num_experts)
            throw ConfigError("moe: n_values size must equal num_experts");
        for (double n : ns) experts_.emplace_back(n, cfg_.sigma);

        const int E = cfg_.num_experts, C = cfg_.feat_channels;
        w_g_ = Tensor<T>(Array<T>({3, E}, T(0)), true);
        w_noise_ = Tensor<T>(Array<T>({3, E}, T(0)), true);
        conv1_w_ = he_init({3, 3, 7, C}, 9 * 7, init);
        conv1_b_ = Tensor<T>(Array<T>({C}, T(0)), true);
        dw_w_ = he_init({3, 3, C}, 9, init);
        dw_b_ = Tensor<T>(Array<T>({C}, T(0)), true);
        head_w_ = Tensor<T>(Array<T>({1, 1, C, 3}, T(0)), true);
        head_b_ = Tensor<T>(Array<T>({3}, static_cast<T>(std::log(std::exp(1.0) - 1.0))), true);
        if (cfg_.learnable_n) {
            Array<T> nv({E});
            for (int i = 0; i < E; ++i) nv.v[static_cast<size_t>(i)] = static_cast<T>(ns[static_cast<size_t>(i)]);
            n_param_ = Tensor<T>(std::move(nv), true);
        }
    }

    GateResult<T> gate(const Tensor<T>& i_star, Rng* noise_rng) const {
        return noisy_topk_gate(i_star, w_g_, w_noise_, cfg_.k,
                               cfg_.noise ? noise_rng : nullptr);
    }

    Output forward(const Tensor<T>& img, Rng* noise_rng, bool no_moe = false) const {
        Output out;
        Tensor<T> i_star = channel_means(img);
        out.gate = gate(i_star, noise_rng);
        Tensor<T> moe;
        if (no_moe) {
            moe = img;  // ablation: raw image feeds the head instead of the MoE mix
        } else {
            moe = moe_combine(img, out.gate, experts_,
                              cfg_.learnable_n ? &n_param_ : nullptr, &expert_evals);
        }
        Tensor<T> mean_map = mean_over_channels(img);
        Tensor<T> cat = concat_channels<T>({img, moe, mean_map});
        out.l_feat = dwconv2d(conv2d(cat, conv1_w_, conv1_b_, 1, 1), dw_w_, dw_b_, 1, 1);
        out.l_bar = softplus(conv2d(out.l_feat, head_w_, head_b_, 1, 0));
        return out;
    }

    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor<T>>>& out) const {
        out.emplace_back(prefix + "w_g", w_g_);
        out.emplace_back(prefix + "w_noise", w_noise_);
        out.emplace_back(prefix + "conv1.w", conv1_w_);
        out.emplace_back(prefix + "conv1.b", conv1_b_);
        out.emplace_back(prefix + "dw.w", dw_w_);
        out.emplace_back(prefix + "dw.b", dw_b_);
        out.emplace_back(prefix + "head.w", head_w_);
        out.emplace_back(prefix + "head.b", head_b_);
        if (cfg_.learnable_n) out.emplace_back(prefix + "n", n_param_);
    }

    const Config& config() const { return cfg_; }
    const std::vector<SCurveExpert>& experts() const { return experts_; }

    mutable int64_t expert_evals = 0;  // instrumentation for the sparsity contract

private:
    static Tensor<T> he_init(std::vector<int> shape, int fan_in, Rng& rng) {
        Array<T> a(std::move(shape));
        T std_dev = static_cast<T>(std::sqrt(2.0 / fan_in));
        for (auto& v : a.v) v = static_cast<T>(rng.normal()) * std_dev;
        return Tensor<T>(std::move(a), true);
    }

    Config cfg_;
    std::vector<SCurveExpert> experts_;
    Tensor<T> w_g_, w_noise_;
    Tensor<T> conv1_w_, conv1_b_, dw_w_, dw_b_, head_w_, head_b_;
    Tensor<T> n_param_;
};

}  // namespace dime

#endif
