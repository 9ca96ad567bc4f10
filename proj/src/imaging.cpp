#include "dime/imaging.hpp"

#include <algorithm>
#include <cmath>

#include "dime/core/errors.hpp"

namespace dime {

Image Image::from_array(Array<float> a) {
    if (a.ndim() != 3 || a.shape[2] != 3)
        throw ShapeError("Image requires an H*W*3 array, got " + shape_str(a.shape));
    if (a.shape[0] < 8 || a.shape[1] < 8)
        throw ShapeError("Image requires H >= 8 and W >= 8, got " + shape_str(a.shape));
    for (float& v : a.v) {
        if (!std::isfinite(v)) throw Error("Image contains non-finite values");
        v = std::clamp(v, 0.0f, 1.0f);
    }
    Image img;
    img.data = std::move(a);
    return img;
}

Array<float> rgb_to_hsv_v(const Image& img) {
    const int H = img.height(), W = img.width();
    Array<float> v({H, W});
    for (int p = 0; p < H * W; ++p) {
        const float* px = img.data.v.data() + static_cast<size_t>(p) * 3;
        v.v[static_cast<size_t>(p)] = std::max({px[0], px[1], px[2]});
    }
    return v;
}

namespace {

// Topographic prominence of a plateau run [a, b] with height h: on each
// side, walk until a strictly higher bin or the border; the side's base is
// the minimum seen. A border side contributes no base (treated as -inf).
float run_prominence(const std::vector<float>& s, int a, int b, float h) {
    float left = -1.0f, right = -1.0f;
    bool has_left = false, has_right = false;
    float m = h;
    for (int i = a - 1; i >= 0; --i) {
        if (s[static_cast<size_t>(i)] > h) break;
        m = std::min(m, s[static_cast<size_t>(i)]);
        has_left = true;
        left = m;
    }
    m = h;
    for (int i = b + 1; i < static_cast<int>(s.size()); ++i) {
        if (s[static_cast<size_t>(i)] > h) break;
        m = std::min(m, s[static_cast<size_t>(i)]);
        has_right = true;
        right = m;
    }
    if (!has_left && !has_right) return h;
    if (!has_left) return h - right;
    if (!has_right) return h - left;
    return h - std::max(left, right);
}

}  // namespace

BrightnessHistogram v_histogram(const Image& img, int bins, int smooth_width,
                                double peak_threshold) {
    if (bins < 8) throw ConfigError("v_histogram: bins must be >= 8");
    if (smooth_width < 1 || smooth_width % 2 == 0)
        throw ConfigError("v_histogram: smooth_width must be odd and positive");

    Array<float> v = rgb_to_hsv_v(img);
    std::vector<double> counts(static_cast<size_t>(bins), 0.0);
    for (float x : v.v) {
        int b = std::min(static_cast<int>(x * bins), bins - 1);
        counts[static_cast<size_t>(b)] += 1.0;
    }
    double total = static_cast<double>(v.v.size());

    BrightnessHistogram hist;
    hist.bins.resize(static_cast<size_t>(bins));
    for (int i = 0; i < bins; ++i)
        hist.bins[static_cast<size_t>(i)] = static_cast<float>(counts[static_cast<size_t>(i)] / total);

    // Centered moving average; edge windows are truncated and renormalized
    // by their actual width.
    const int half = smooth_width / 2;
    std::vector<float> smooth(static_cast<size_t>(bins));
    for (int i = 0; i < bins; ++i) {
        int lo = std::max(0, i - half), hi = std::min(bins - 1, i + half);
        double acc = 0.0;
        for (int j = lo; j <= hi; ++j) acc += hist.bins[static_cast<size_t>(j)];
        smooth[static_cast<size_t>(i)] = static_cast<float>(acc / (hi - lo + 1));
    }

    // Peaks: plateau runs above both neighbors (borders count as lower),
    // kept when prominence clears the threshold. A plateau reports its
    // middle bin so a smoothed spike lands on the bin holding the value.
    int i = 0;
    while (i < bins) {
        int j = i;
        while (j + 1 < bins && smooth[static_cast<size_t>(j + 1)] == smooth[static_cast<size_t>(i)])
            ++j;
        float h = smooth[static_cast<size_t>(i)];
        bool left_ok = (i == 0) || smooth[static_cast<size_t>(i - 1)] < h;
        bool right_ok = (j == bins - 1) || smooth[static_cast<size_t>(j + 1)] < h;
        if (left_ok && right_ok && h > 0.0f) {
            float prom = run_prominence(smooth, i, j, h);
            if (prom >= static_cast<float>(peak_threshold)) {
                int mid = i + (j - i) / 2;
                hist.peak_positions.push_back((mid + 0.5f) / static_cast<float>(bins));
                hist.peak_masses.push_back(h);
            }
        }
        i = j + 1;
    }
    return hist;
}

const char* to_string(IlluminationLabel label) {
    switch (label) {
        case IlluminationLabel::LowLight: return "lowlight";
        case IlluminationLabel::Backlit: return "backlit";
        case IlluminationLabel::Normal: return "normal";
    }
    return "?";
}

IlluminationLabel classify_illumination(const BrightnessHistogram& hist, double low, double high) {
    bool has_low = false, has_high = false;
    for (float p : hist.peak_positions) {
        if (p < low) has_low = true;
        if (p > high) has_high = true;
    }
    if (has_low && has_high) return IlluminationLabel::Backlit;

    if (!hist.peak_positions.empty()) {
        size_t best = 0;
        for (size_t k = 1; k < hist.peak_masses.size(); ++k)
            if (hist.peak_masses[k] > hist.peak_masses[best]) best = k;  // tie: lower position
        if (hist.peak_positions[best] < low && !has_high) return IlluminationLabel::LowLight;
    }
    return IlluminationLabel::Normal;
}

}  // namespace dime
