#ifndef DIME_TRAINING_HPP
#define DIME_TRAINING_HPP

#include <functional>
#include <iosfwd>
#include <map>

#include "dime/metrics.hpp"
#include "dime/model.hpp"

namespace dime {

struct LossWeights {
    double l1 = 1.0;
    double ssim = 0.5;
    double perc = 0.1;
};

// Frozen random-projection feature stack standing in for pretrained
// perceptual features: three stride-2 convs with fixed-seed weights,
// deterministic across runs and never trained. Not equivalent to a
// pretrained extractor; swap in real features through the same interface
// if available.
template <typename T>
class PerceptualProxy {
public:
    explicit PerceptualProxy(uint64_t seed = 0x7f4a7c15) {
        Rng rng(seed);
        w1_ = frozen({3, 3, 3, 8}, rng);
        b1_ = frozen_zero({8});
        w2_ = frozen({3, 3, 8, 16}, rng);
        b2_ = frozen_zero({16});
        w3_ = frozen({3, 3, 16, 32}, rng);
        b3_ = frozen_zero({32});
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto h1 = silu(conv2d(x, w1_, b1_, 2, 1));
        auto h2 = silu(conv2d(h1, w2_, b2_, 2, 1));
        return conv2d(h2, w3_, b3_, 2, 1);
    }

private:
    static Tensor<T> frozen(std::vector<int> shape, Rng& rng) {
        int fan_in = shape[0] * shape[1] * shape[2];
        T stddev = static_cast<T>(std::sqrt(2.0 / fan_in));
        Array<T> a(std::move(shape));
        for (auto& v : a.v) v = static_cast<T>(rng.normal()) * stddev;
        return Tensor<T>(std::move(a), false);
    }
    static Tensor<T> frozen_zero(std::vector<int> shape) {
        return Tensor<T>(Array<T>(std::move(shape), T(0)), false);
    }

    Tensor<T> w1_, b1_, w2_, b2_, w3_, b3_;
};

template <typename T>
struct LossParts {
    Tensor<T> total;
    double l1 = 0.0;
    double ssim = 0.0;  // 1 - SSIM term
    double perc = 0.0;
};

// w_l1 * mean|p-t| + w_ssim * (1 - SSIM(p,t)) + w_perc * mean|phi(p)-phi(t)|.
// Terms with zero weight are skipped entirely.
template <typename T>
LossParts<T> compute_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& w,
                          const PerceptualProxy<T>& phi) {
    if (pred.shape() != target.shape()) throw ShapeError("loss: shape mismatch");
    LossParts<T> parts;
    Tensor<T> total = Tensor<T>::scalar(T(0));
    if (w.l1 > 0.0) {
        auto l1 = mean_all(abs_op(sub(pred, target)));
        parts.l1 = static_cast<double>(l1.item());
        total = add(total, affine(l1, static_cast<T>(w.l1), T(0)));
    }
    if (w.ssim > 0.0) {
        auto ssim_term = affine(ssim_index(pred, target), T(-1), T(1));
        parts.ssim = static_cast<double>(ssim_term.item());
        total = add(total, affine(ssim_term, static_cast<T>(w.ssim), T(0)));
    }
    if (w.perc > 0.0) {
        auto perc = mean_all(abs_op(sub(phi.forward(pred), phi.forward(target))));
        parts.perc = static_cast<double>(perc.item());
        total = add(total, affine(perc, static_cast<T>(w.perc), T(0)));
    }
    parts.total = total;
    return parts;
}

struct TrainConfig {
    int64_t iterations = 2000;
    int batch_size = 4;
    int patch = 64;
    double lr_init = 2e-4;
    double lr_final = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    uint64_t seed = 0;
    bool mixup = true;
    bool rotation = true;
    bool flip = true;
    double mixup_alpha = 0.2;
    double grad_clip = 1.0;
    bool grad_clip_enabled = true;
    int64_t checkpoint_every = 500;
    int64_t log_every = 100;
    LossWeights weights;
    double balance_loss_weight = 0.0;

    void validate(int spatial_multiple) const {
        if (!(lr_final < lr_init)) throw ConfigError("train: lr_final must be below lr_init");
        if (iterations < 1) throw ConfigError("train: iterations must be positive");
        if (patch % spatial_multiple != 0)
            throw ConfigError("train: patch must be divisible by " +
                              std::to_string(spatial_multiple));
    }
};

// lr(t) = lr_final + (lr_init - lr_final)/2 * (1 + cos(pi t / iterations))
inline double cosine_lr(int64_t t, const TrainConfig& cfg) {
    if (t < 0 || t > cfg.iterations) throw ConfigError("cosine_lr: iteration out of range");
    double c = std::cos(3.14159265358979323846 * static_cast<double>(t) /
                        static_cast<double>(cfg.iterations));
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + c);
}

// Adam with bias correction, eps = 1e-8 outside the square root. A
// non-finite gradient aborts the step and names the parameter.
template <typename T>
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(std::vector<std::pair<std::string, Tensor<T>>>& params, double lr) {
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            for (T g : p.grad())
                if (!std::isfinite(static_cast<double>(g)))
                    throw TrainingError("adam: non-finite gradient in parameter '" + name + "'");
        }
        ++t_;
        double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (auto& [name, p] : params) {
            State& st = state_[name];
            if (st.m.empty()) {
                st.m.assign(static_cast<size_t>(p.numel()), T(0));
                st.v.assign(static_cast<size_t>(p.numel()), T(0));
            }
            auto& vals = p.mutable_value().v;
            const std::vector<T> zero;
            const std::vector<T>& g = p.has_grad() ? p.grad() : zero;
            for (size_t i = 0; i < vals.size(); ++i) {
                T gi = g.empty() ? T(0) : g[i];
                st.m[i] = static_cast<T>(b1_) * st.m[i] + static_cast<T>(1.0 - b1_) * gi;
                st.v[i] = static_cast<T>(b2_) * st.v[i] + static_cast<T>(1.0 - b2_) * gi * gi;
                double mhat = static_cast<double>(st.m[i]) / bc1;
                double vhat = static_cast<double>(st.v[i]) / bc2;
                vals[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    int64_t steps() const { return t_; }

private:
    struct State {
        std::vector<T> m, v;
    };
    double b1_, b2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, State> state_;
};

// Global gradient-norm clipping; returns the pre-clip norm.
template <typename T>
double clip_global_norm(std::vector<std::pair<std::string, Tensor<T>>>& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        T scale = static_cast<T>(max_norm / norm);
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            for (T& g : p.grad()) g *= scale;
        }
    }
    return norm;
}

// ---- augmentation (shared-draw geometric transforms + mixup) --------------

struct AugmentOptions {
    int patch = 64;
    bool rotation = true;
    bool flip = true;
};

struct TrainPair {
    Array<float> degraded;
    Array<float> clean;
};

// Geometric primitives used by augment_pair (HWC arrays).
Array<float> rot90(const Array<float>& a);
Array<float> flip_h(const Array<float>& a);
Array<float> flip_v(const Array<float>& a);

// Shared random crop, then the same rotation/flip draw applied to both
// images of the pair.
TrainPair augment_pair(const Array<float>& degraded, const Array<float>& clean,
                       const AugmentOptions& opt, Rng& rng);

// lambda ~ Beta(alpha, alpha); element i blends with a random partner.
void mixup_batch(std::vector<TrainPair>& batch, double alpha, Rng& rng);

// ---- training loop ----------------------------------------------------------

struct TrainSample {
    Array<float> degraded;
    Array<float> clean;
    std::string id;
};

struct TrainLogRecord {
    int64_t iter = 0;
    double lr = 0, l1 = 0, ssim = 0, perc = 0, total = 0, psnr = 0;
};

struct TrainResult {
    std::vector<TrainLogRecord> records;
};

// Runs the full loop (sample -> augment -> forward -> loss -> backward ->
// clip -> adam with cosine lr). Deterministic given cfg.seed. `log` and
// `csv` receive append-only records as they are produced; checkpoint_cb
// fires every checkpoint_every iterations and at the end.
TrainResult train(DimeNet<float>& model, const std::vector<TrainSample>& dataset,
                  const TrainConfig& cfg, std::ostream* log = nullptr, std::ostream* csv = nullptr,
                  const std::function<void(int64_t, const Rng&)>& checkpoint_cb = {});

}  // namespace dime

#endif
