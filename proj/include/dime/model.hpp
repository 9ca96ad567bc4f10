#ifndef DIME_MODEL_HPP
#define DIME_MODEL_HPP

#include "dime/imaging.hpp"
#include "dime/restorer.hpp"
#include "dime/scurve_moe.hpp"

namespace dime {

// Elementwise R (.) L. Unclamped; clamping happens only when an Image is
// materialized from the result.
template <typename T>
Array<T> compose_retinex(const Array<T>& R, const Array<T>& L) {
    if (R.shape != L.shape)
        throw ShapeError("compose_retinex: shape mismatch " + shape_str(R.shape) + " vs " +
                         shape_str(L.shape));
    for (T v : L.v)
        if (!(v > T(0))) throw Error("compose_retinex: illumination must be strictly positive");
    Array<T> out(R.shape);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = R.v[i] * L.v[i];
    return out;
}

struct AblationFlags {
    bool no_moe = false;
    bool all_n_below_1 = false;
    bool all_n_above_1 = false;
    bool no_estimator = false;
    bool no_restorer = false;
};

// The assembled pipeline:
//   (L_bar, L_feat) = estimator(I); lit = I (.) L_bar;
//   R = lit + restorer(lit, L_feat); output = clamp(R) as an Image.
template <typename T>
class DimeNet {
public:
    struct Config {
        typename MoeEstimator<T>::Config moe;
        typename Restorer<T>::Config restorer;
        AblationFlags ablation;
        uint64_t init_seed = 0;
    };

    explicit DimeNet(const Config& cfg) : cfg_(cfg) {
        if (cfg_.ablation.all_n_below_1 && cfg_.ablation.all_n_above_1)
            throw ConfigError("ablation: all_n_below_1 and all_n_above_1 are exclusive");
        Rng init(cfg_.init_seed);
        typename MoeEstimator<T>::Config mcfg = cfg_.moe;
        if (cfg_.ablation.all_n_below_1)
            mcfg.n_values = default_n_values(mcfg.num_experts, 0.2, 0.95);
        if (cfg_.ablation.all_n_above_1)
            mcfg.n_values = default_n_values(mcfg.num_experts, 1.0 / 0.95, 5.0);
        cfg_.restorer.feat_channels = mcfg.feat_channels;

        if (cfg_.ablation.no_estimator) {
            // L_bar == 1; a bare conv still supplies illumination features
            // so the restorer stays well-typed.
            int cl = mcfg.feat_channels;
            Array<T> w({3, 3, 3, cl});
            T stddev = static_cast<T>(std::sqrt(2.0 / 27.0));
            for (auto& v : w.v) v = static_cast<T>(init.normal()) * stddev;
            fallback_w_ = Tensor<T>(std::move(w), true);
            fallback_b_ = Tensor<T>(Array<T>({cl}, T(0)), true);
        } else {
            estimator_ = std::make_unique<MoeEstimator<T>>(mcfg, init);
        }
        if (!cfg_.ablation.no_restorer)
            restorer_ = std::make_unique<Restorer<T>>(cfg_.restorer, init);
    }

    struct Forward {
        Tensor<T> pred;   // unclamped R
        Tensor<T> lit;    // I (.) L_bar
        Tensor<T> l_bar;
        GateResult<T> gate;
    };

    // Spatial dims must already be divisible by the restorer multiple;
    // enhance() handles padding for arbitrary sizes.
    Forward forward(const Tensor<T>& img, Rng* noise_rng) const {
        Forward out;
        Tensor<T> l_feat;
        if (cfg_.ablation.no_estimator) {
            out.l_bar = Tensor<T>(Array<T>(img.shape(), T(1)), false);
            out.lit = img;
            l_feat = conv2d(img, fallback_w_, fallback_b_, 1, 1);
        } else {
            auto est = estimator_->forward(img, noise_rng, cfg_.ablation.no_moe);
            out.l_bar = est.l_bar;
            out.gate = est.gate;
            out.lit = mul(img, est.l_bar);
            l_feat = est.l_feat;
        }
        if (cfg_.ablation.no_restorer) {
            out.pred = out.lit;
        } else {
            out.pred = add(out.lit, restorer_->forward(out.lit, l_feat));
        }
        return out;
    }

    // Deterministic inference entry point: no gating noise, reflective
    // padding to the required multiple, clamp on materialization.
    Image enhance(const Image& img) const {
        NoGradGuard ng;
        const int H = img.height(), W = img.width();
        const int mult = spatial_multiple();
        const int H2 = (H + mult - 1) / mult * mult;
        const int W2 = (W + mult - 1) / mult * mult;

        Tensor<T> x(img.data.template cast<T>(), false);
        if (H2 != H || W2 != W) x = gather_map(x, reflect_pad_map(H, W, 3, H2, W2), {H2, W2, 3});
        Tensor<T> pred = forward(x, nullptr).pred;
        if (H2 != H || W2 != W) pred = gather_map(pred, crop_map(H2, W2, 3, H, W), {H, W, 3});

        Array<float> out({H, W, 3});
        for (size_t i = 0; i < out.v.size(); ++i) {
            T v = pred.value().v[i];
            out.v[i] = static_cast<float>(std::clamp(v, T(0), T(1)));
        }
        return Image::from_array(std::move(out));
    }

    std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        if (estimator_) estimator_->collect_params("estimator.", out);
        if (fallback_w_.defined()) {
            out.emplace_back("fallback.w", fallback_w_);
            out.emplace_back("fallback.b", fallback_b_);
        }
        if (restorer_) restorer_->collect_params("restorer.", out);
        return out;
    }

    int spatial_multiple() const { return restorer_ ? restorer_->spatial_multiple() : 1; }
    const Config& config() const { return cfg_; }
    const MoeEstimator<T>* estimator() const { return estimator_.get(); }
    const Restorer<T>* restorer() const { return restorer_.get(); }

private:
    Config cfg_;
    std::unique_ptr<MoeEstimator<T>> estimator_;
    std::unique_ptr<Restorer<T>> restorer_;
    Tensor<T> fallback_w_, fallback_b_;
};

}  // namespace dime

#endif
