#ifndef DIME_RESTORER_HPP
#define DIME_RESTORER_HPP

#include "dime/dscam.hpp"

namespace dime {

// U-Net estimating the negated aggregate degradation -C from the
// illumination-compensated image and the illumination features. The final
// head is zero-initialized, so an untrained restorer returns exactly zero
// and the full pipeline starts as the identity.
template <typename T>
class Restorer {
public:
    struct Config {
        int base_channels = 16;  // C0; bottleneck is C0 * 2^depth
        int depth = 2;           // stride-2 stages
        int dscam_blocks = 2;
        int feat_channels = 16;  // channels of the incoming L_feat
        int heads = 4;
        int d_state = 8;
        bool per_direction_scan = false;
    };

    Restorer(const Config& cfg, Rng& init) : cfg_(cfg) {
        if (cfg_.base_channels < 1 || cfg_.depth < 1 || cfg_.dscam_blocks < 1)
            throw ConfigError("restorer: base_channels, depth and dscam_blocks must be positive");
        const int c0 = cfg_.base_channels;
        enc_w_.push_back(conv_init({3, 3, 3, c0}, init));
        enc_b_.push_back(zeros({c0}));
        for (int i = 1; i <= cfg_.depth; ++i) {
            int cin = c0 << (i - 1), cout = c0 << i;
            enc_w_.push_back(conv_init({3, 3, cin, cout}, init));
            enc_b_.push_back(zeros({cout}));
            int pin = (i == 1) ? cfg_.feat_channels : (c0 << (i - 1));
            pyr_w_.push_back(conv_init({3, 3, pin, cout}, init));
            pyr_b_.push_back(zeros({cout}));
        }
        const int cb = c0 << cfg_.depth;
        typename Dscam<T>::Config dcfg;
        dcfg.channels = cb;
        dcfg.heads = cfg_.heads;
        dcfg.d_state = cfg_.d_state;
        dcfg.per_direction_params = cfg_.per_direction_scan;
        for (int b = 0; b < cfg_.dscam_blocks; ++b) dscam_.emplace_back(dcfg, init);
        for (int i = cfg_.depth; i >= 1; --i) {
            int ch = c0 << i;
            dec_up_w_.push_back(conv_init({3, 3, ch, ch / 2}, init));
            dec_up_b_.push_back(zeros({ch / 2}));
            dec_fuse_w_.push_back(conv_init({3, 3, ch, ch / 2}, init));
            dec_fuse_b_.push_back(zeros({ch / 2}));
        }
        head_w_ = Tensor<T>(Array<T>({3, 3, c0, 3}, T(0)), true);
        head_b_ = zeros({3});
    }

    // lit = I (.) L_bar (unclamped), l_feat = L^l. Returns -C, same H*W as lit.
    Tensor<T> forward(const Tensor<T>& lit, const Tensor<T>& l_feat) const {
        if (lit.shape().size() != 3 || lit.shape()[2] != 3)
            throw ShapeError("restorer: lit must be H*W*3");
        const int H = lit.shape()[0], W = lit.shape()[1];
        const int mult = spatial_multiple();
        if (H % mult != 0 || W % mult != 0)
            throw ShapeError("restorer: spatial dims must be divisible by " + std::to_string(mult) +
                             "; pad reflectively and crop afterwards");
        if (l_feat.shape()[0] != H || l_feat.shape()[1] != W ||
            l_feat.shape()[2] != cfg_.feat_channels)
            throw ShapeError("restorer: l_feat shape mismatch");

        std::vector<Tensor<T>> skips;
        Tensor<T> x = silu(conv2d(lit, enc_w_[0], enc_b_[0], 1, 1));
        for (int i = 1; i <= cfg_.depth; ++i) {
            skips.push_back(x);
            x = silu(conv2d(x, enc_w_[static_cast<size_t>(i)], enc_b_[static_cast<size_t>(i)], 2, 1));
        }

        Tensor<T> lf = l_feat;
        for (size_t i = 0; i < pyr_w_.size(); ++i)
            lf = silu(conv2d(lf, pyr_w_[i], pyr_b_[i], 2, 1));

        for (const auto& blk : dscam_) x = blk.forward(x, lf);

        for (int i = 0; i < cfg_.depth; ++i) {
            x = silu(conv2d(upsample_nearest_2x(x), dec_up_w_[static_cast<size_t>(i)],
                            dec_up_b_[static_cast<size_t>(i)], 1, 1));
            Tensor<T> skip = skips[skips.size() - 1 - static_cast<size_t>(i)];
            if (debug_zero_skips)
                skip = Tensor<T>(Array<T>(skip.shape(), T(0)), false);
            x = silu(conv2d(concat_channels<T>({x, skip}), dec_fuse_w_[static_cast<size_t>(i)],
                            dec_fuse_b_[static_cast<size_t>(i)], 1, 1));
        }
        return conv2d(x, head_w_, head_b_, 1, 1);
    }

    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor<T>>>& out) const {
        for (size_t i = 0; i < enc_w_.size(); ++i) {
            out.emplace_back(prefix + "enc" + std::to_string(i) + ".w", enc_w_[i]);
            out.emplace_back(prefix + "enc" + std::to_string(i) + ".b", enc_b_[i]);
        }
        for (size_t i = 0; i < pyr_w_.size(); ++i) {
            out.emplace_back(prefix + "pyr" + std::to_string(i + 1) + ".w", pyr_w_[i]);
            out.emplace_back(prefix + "pyr" + std::to_string(i + 1) + ".b", pyr_b_[i]);
        }
        for (size_t b = 0; b < dscam_.size(); ++b)
            dscam_[b].collect_params(prefix + "dscam" + std::to_string(b) + ".", out);
        for (size_t i = 0; i < dec_up_w_.size(); ++i) {
            std::string d = prefix + "dec" + std::to_string(i) + ".";
            out.emplace_back(d + "up.w", dec_up_w_[i]);
            out.emplace_back(d + "up.b", dec_up_b_[i]);
            out.emplace_back(d + "fuse.w", dec_fuse_w_[i]);
            out.emplace_back(d + "fuse.b", dec_fuse_b_[i]);
        }
        out.emplace_back(prefix + "head.w", head_w_);
        out.emplace_back(prefix + "head.b", head_b_);
    }

    int spatial_multiple() const { return 1 << cfg_.depth; }
    const Config& config() const { return cfg_; }

    mutable bool debug_zero_skips = false;  // connectivity smoke tests

private:
    static Tensor<T> zeros(std::vector<int> shape) {
        return Tensor<T>(Array<T>(std::move(shape), T(0)), true);
    }
    static Tensor<T> conv_init(std::vector<int> shape, Rng& rng) {
        int fan_in = shape[0] * shape[1] * shape[2];
        T stddev = static_cast<T>(std::sqrt(2.0 / fan_in));
        Array<T> a(std::move(shape));
        for (auto& v : a.v) v = static_cast<T>(rng.normal()) * stddev;
        return Tensor<T>(std::move(a), true);
    }

    Config cfg_;
    std::vector<Tensor<T>> enc_w_, enc_b_;
    std::vector<Tensor<T>> pyr_w_, pyr_b_;
    std::vector<Dscam<T>> dscam_;
    std::vector<Tensor<T>> dec_up_w_, dec_up_b_, dec_fuse_w_, dec_fuse_b_;
    Tensor<T> head_w_, head_b_;
};

}  // namespace dime

#endif
