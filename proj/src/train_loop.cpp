#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dime/training.hpp"

namespace dime {
namespace {

Array<float> crop(const Array<float>& a, int y0, int x0, int size) {
    const int W = a.shape[1], C = a.shape[2];
    Array<float> out({size, size, C});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < C; ++c)
                out.at(y, x, c) = a.v[(static_cast<size_t>(y0 + y) * W + (x0 + x)) * C + c];
    return out;
}

}  // namespace

Array<float> rot90(const Array<float>& a) {
    const int H = a.shape[0], W = a.shape[1], C = a.shape[2];
    Array<float> out({W, H, C});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) out.at(x, H - 1 - y, c) = a.at(y, x, c);
    return out;
}

Array<float> flip_h(const Array<float>& a) {
    const int H = a.shape[0], W = a.shape[1], C = a.shape[2];
    Array<float> out(a.shape);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) out.at(y, W - 1 - x, c) = a.at(y, x, c);
    return out;
}

Array<float> flip_v(const Array<float>& a) {
    const int H = a.shape[0], W = a.shape[1], C = a.shape[2];
    Array<float> out(a.shape);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) out.at(H - 1 - y, x, c) = a.at(y, x, c);
    return out;
}

TrainPair augment_pair(const Array<float>& degraded, const Array<float>& clean,
                       const AugmentOptions& opt, Rng& rng) {
    if (degraded.shape != clean.shape) throw ShapeError("augment: pair shapes differ");
    const int H = degraded.shape[0], W = degraded.shape[1];
    if (opt.patch > H || opt.patch > W)
        throw ConfigError("augment: patch " + std::to_string(opt.patch) +
                          " larger than image " + shape_str(degraded.shape));

    // shared draws: one offset, one rotation, one flip mask for both images
    int y0 = (H == opt.patch) ? 0 : rng.uniform_int(0, H - opt.patch);
    int x0 = (W == opt.patch) ? 0 : rng.uniform_int(0, W - opt.patch);
    TrainPair out{crop(degraded, y0, x0, opt.patch), crop(clean, y0, x0, opt.patch)};

    if (opt.rotation) {
        int k = rng.uniform_int(0, 3);
        for (int i = 0; i < k; ++i) {
            out.degraded = rot90(out.degraded);
            out.clean = rot90(out.clean);
        }
    }
    if (opt.flip) {
        if (rng.uniform() < 0.5) {
            out.degraded = flip_h(out.degraded);
            out.clean = flip_h(out.clean);
        }
        if (rng.uniform() < 0.5) {
            out.degraded = flip_v(out.degraded);
            out.clean = flip_v(out.clean);
        }
    }
    return out;
}

void mixup_batch(std::vector<TrainPair>& batch, double alpha, Rng& rng) {
    if (batch.size() < 2) return;
    const std::vector<TrainPair> orig = batch;
    for (size_t i = 0; i < batch.size(); ++i) {
        float lam = static_cast<float>(rng.beta(alpha, alpha));
        size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(batch.size()) - 1));
        if (j == i) continue;
        auto blend = [lam](Array<float>& dst, const Array<float>& a, const Array<float>& b) {
            for (size_t k = 0; k < dst.v.size(); ++k)
                dst.v[k] = lam * a.v[k] + (1.0f - lam) * b.v[k];
        };
        blend(batch[i].degraded, orig[i].degraded, orig[j].degraded);
        blend(batch[i].clean, orig[i].clean, orig[j].clean);
    }
}

namespace {

void emit(std::ostream* log, std::ostream* csv, const TrainLogRecord& r) {
    if (log) {
        *log << "iter=" << r.iter << " lr=" << r.lr << " l1=" << r.l1 << " ssim=" << r.ssim
             << " perc=" << r.perc << " total=" << r.total << " psnr=" << r.psnr << "\n";
        log->flush();
    }
    if (csv) {
        *csv << r.iter << "," << r.lr << "," << r.l1 << "," << r.ssim << "," << r.perc << ","
             << r.total << "," << r.psnr << "\n";
        csv->flush();
    }
}

}  // namespace

TrainResult train(DimeNet<float>& model, const std::vector<TrainSample>& dataset,
                  const TrainConfig& cfg, std::ostream* log, std::ostream* csv,
                  const std::function<void(int64_t, const Rng&)>& checkpoint_cb) {
    if (dataset.empty()) throw ConfigError("train: dataset is empty");
    cfg.validate(model.spatial_multiple());

    auto params = model.named_params();
    Adam<float> adam(cfg.beta1, cfg.beta2);
    PerceptualProxy<float> phi;
    Rng rng(cfg.seed);
    const bool noise = model.config().moe.noise && !model.config().ablation.no_estimator;

    AugmentOptions aug;
    aug.patch = cfg.patch;
    aug.rotation = cfg.rotation;
    aug.flip = cfg.flip;

    if (csv) {
        *csv << "iter,lr,l1,ssim,perc,total,psnr\n";
    }

    TrainResult result;
    TrainLogRecord last;
    for (int64_t t = 0; t < cfg.iterations; ++t) {
        double lr = cosine_lr(t, cfg);

        std::vector<int> ids(static_cast<size_t>(cfg.batch_size));
        std::vector<TrainPair> batch;
        batch.reserve(ids.size());
        for (auto& id : ids) {
            id = rng.uniform_int(0, static_cast<int>(dataset.size()) - 1);
            const auto& s = dataset[static_cast<size_t>(id)];
            batch.push_back(augment_pair(s.degraded, s.clean, aug, rng));
        }
        if (cfg.mixup) mixup_batch(batch, cfg.mixup_alpha, rng);

        Tensor<float> total;
        Tensor<float> importance;
        double l1 = 0, ssim_term = 0, perc = 0, train_psnr = 0;
        for (const auto& pair : batch) {
            Tensor<float> img(pair.degraded, false);
            Tensor<float> target(pair.clean, false);
            auto fwd = model.forward(img, noise ? &rng : nullptr);
            auto parts = compute_loss(fwd.pred, target, cfg.weights, phi);
            total = total.defined() ? add(total, parts.total) : parts.total;
            l1 += parts.l1;
            ssim_term += parts.ssim;
            perc += parts.perc;
            if (cfg.balance_loss_weight > 0.0 && fwd.gate.weights.defined()) {
                importance = importance.defined() ? add(importance, fwd.gate.weights)
                                                  : fwd.gate.weights;
            }

            Array<float> clamped = fwd.pred.value();
            for (auto& v : clamped.v) v = std::clamp(v, 0.0f, 1.0f);
            train_psnr += psnr(clamped, pair.clean);
        }
        const float inv_b = 1.0f / static_cast<float>(batch.size());
        total = affine(total, inv_b, 0.0f);
        l1 *= inv_b;
        ssim_term *= inv_b;
        perc *= inv_b;
        train_psnr *= inv_b;

        if (cfg.balance_loss_weight > 0.0 && importance.defined()) {
            // importance CV^2 = var/mean^2 over summed gate weights
            auto mean = mean_all(importance);
            auto centered = add_scalar(importance, neg(mean));
            auto var = mean_all(mul(centered, centered));
            auto cv2 = div(var, mul(mean, mean));
            total = add(total, affine(cv2, static_cast<float>(cfg.balance_loss_weight), 0.0f));
        }

        if (!std::isfinite(total.item())) {
            std::ostringstream os;
            os << "train: non-finite loss at iteration " << t << " (batch:";
            for (int id : ids) os << " " << id;
            os << ")";
            throw TrainingError(os.str());
        }

        for (auto& [name, p] : params) p.zero_grad();
        total.backward();
        if (cfg.grad_clip_enabled) clip_global_norm(params, cfg.grad_clip);
        adam.step(params, lr);

        last = TrainLogRecord{t, lr, l1, ssim_term, perc, total.item(), train_psnr};
        if (t % cfg.log_every == 0) {
            result.records.push_back(last);
            emit(log, csv, last);
        }
        if (checkpoint_cb && cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 &&
            t + 1 < cfg.iterations) {
            checkpoint_cb(t + 1, rng);
        }
    }

    // closing record pins the schedule endpoint lr(iterations) = lr_final
    last.iter = cfg.iterations;
    last.lr = cosine_lr(cfg.iterations, cfg);
    result.records.push_back(last);
    emit(log, csv, last);
    if (checkpoint_cb) checkpoint_cb(cfg.iterations, rng);
    return result;
}

}  // namespace dime
