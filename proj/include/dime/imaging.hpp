#ifndef DIME_IMAGING_HPP
#define DIME_IMAGING_HPP

#include <string>
#include <vector>

#include "dime/core/array.hpp"

namespace dime {

// H*W*3 float image, values in [0, 1]. Materializing an Image clamps;
// intermediate pipeline tensors stay unclamped.
struct Image {
    Array<float> data;  // {H, W, 3}

    Image() = default;
    int height() const { return data.shape[0]; }
    int width() const { return data.shape[1]; }

    // Validates shape {H>=8, W>=8, 3} and finiteness, clamps to [0, 1].
    static Image from_array(Array<float> a);
};

// V channel of HSV: per-pixel max over R, G, B. Shape {H, W}.
Array<float> rgb_to_hsv_v(const Image& img);

struct BrightnessHistogram {
    std::vector<float> bins;            // probability mass, sums to 1
    std::vector<float> peak_positions;  // bin centers, strictly increasing
    std::vector<float> peak_masses;     // smoothed histogram value at each peak
};

// Normalized, moving-average-smoothed V histogram with prominence-filtered
// peaks. Peak constants are heuristic and overridable through the config.
BrightnessHistogram v_histogram(const Image& img, int bins = 64, int smooth_width = 5,
                                double peak_threshold = 0.01);

enum class IlluminationLabel { LowLight, Backlit, Normal };

const char* to_string(IlluminationLabel label);

// Backlit when peaks exist both below `low` and above `high`; low-light
// when the dominant peak is below `low` and nothing sits above `high`.
IlluminationLabel classify_illumination(const BrightnessHistogram& hist, double low = 0.33,
                                        double high = 0.66);

}  // namespace dime

#endif
