#ifndef DIME_DATASYNTH_HPP
#define DIME_DATASYNTH_HPP

#include <string>
#include <vector>

#include "dime/core/rng.hpp"
#include "dime/imaging.hpp"

namespace dime {

// Sampled degradation recipe; every drawn value is logged in the manifest.
struct DegradationSpec {
    enum class Kind { LowLight, Backlit };
    Kind kind = Kind::LowLight;
    // low-light: out = clamp(scale * clean^gamma + N(0, noise^2))
    double gamma = 0.0;   // [1.5, 3.0]
    double scale = 0.0;   // [0.1, 0.4]
    double noise = 0.0;   // [0.01, 0.05]
    // backlit: out = clamp(M*clamp(g_hi*clean) + (1-M)*(g_lo*clean))
    double g_hi = 0.0;       // [1.5, 2.5]
    double g_lo = 0.0;       // [0.1, 0.35]
    double mask_sigma = 0.0; // blur sigma as a fraction of min(H, W)

    static DegradationSpec sample_lowlight(Rng& rng);
    static DegradationSpec sample_backlit(Rng& rng);
};

Image degrade_lowlight(const Image& clean, const DegradationSpec& spec, Rng& rng);
Image degrade_backlit(const Image& clean, const DegradationSpec& spec, Rng& rng);

// Procedural clean image: smooth gradients plus soft shapes with
// mid-range exposure, the stand-in for a well-lit photograph.
Image generate_clean_image(Rng& rng, int height = 128, int width = 128);

struct ManifestRow {
    int id = 0;
    DegradationSpec spec;
    std::string degraded_path;  // relative to the dataset root
    std::string clean_path;
};

struct Manifest {
    std::vector<ManifestRow> rows;
};

// TSV with header: id kind gamma scale noise g_hi g_lo mask degraded_path clean_path
void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

// Degrades images from clean_dir into out_dir/{degraded,clean}/pair_*.png
// plus out_dir/manifest.tsv. Deterministic for a given seed: every pair
// draws from its own substream of (seed, id), so DIME_THREADS-parallel
// generation produces identical bytes.
Manifest build_dataset(const std::string& clean_dir, int n_low, int n_back, uint64_t seed,
                       const std::string& out_dir);

struct PairedSample {
    Image degraded;
    Image clean;
    std::string name;
};

struct PairLoadReport {
    std::vector<PairedSample> pairs;
    std::vector<std::string> skipped;  // per-file reports (orphans, size mismatches)
};

// Matches *.png by filename across the two directories (LOL-style
// low/ + high/ layouts load this way). Throws IoError when nothing matches.
PairLoadReport load_paired_dir(const std::string& degraded_dir, const std::string& clean_dir);

}  // namespace dime

#endif
