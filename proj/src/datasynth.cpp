#include "dime/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "dime/png_io.hpp"

namespace fs = std::filesystem;

namespace dime {

DegradationSpec DegradationSpec::sample_lowlight(Rng& rng) {
    DegradationSpec s;
    s.kind = Kind::LowLight;
    s.gamma = rng.uniform(1.5, 3.0);
    s.scale = rng.uniform(0.1, 0.4);
    s.noise = rng.uniform(0.01, 0.05);
    return s;
}

DegradationSpec DegradationSpec::sample_backlit(Rng& rng) {
    DegradationSpec s;
    s.kind = Kind::Backlit;
    s.g_hi = rng.uniform(1.5, 2.5);
    s.g_lo = rng.uniform(0.1, 0.35);
    // Smoothness as a fraction of min(H, W). Wide enough to look like a
    // soft backlit halo, narrow enough that both exposure modes keep a
    // pure region (a 0.1 fraction smears the bright mode away entirely).
    s.mask_sigma = rng.uniform(0.03, 0.06);
    return s;
}

Image degrade_lowlight(const Image& clean, const DegradationSpec& spec, Rng& rng) {
    Array<float> out(clean.data.shape);
    for (size_t i = 0; i < out.v.size(); ++i) {
        double v = spec.scale * std::pow(static_cast<double>(clean.data.v[i]), spec.gamma) +
                   rng.normal() * spec.noise;
        out.v[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return Image::from_array(std::move(out));
}

namespace {

// Separable Gaussian blur on a single-channel field.
void gaussian_blur(std::vector<float>& m, int H, int W, double sigma) {
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double g = std::exp(-(i * i) / (2.0 * sigma * sigma));
        kernel[static_cast<size_t>(i + radius)] = static_cast<float>(g);
        sum += g;
    }
    for (auto& k : kernel) k = static_cast<float>(k / sum);

    std::vector<float> tmp(m.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                int xx = std::clamp(x + i, 0, W - 1);
                acc += m[static_cast<size_t>(y) * W + xx] * kernel[static_cast<size_t>(i + radius)];
            }
            tmp[static_cast<size_t>(y) * W + x] = acc;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                int yy = std::clamp(y + i, 0, H - 1);
                acc += tmp[static_cast<size_t>(yy) * W + x] * kernel[static_cast<size_t>(i + radius)];
            }
            m[static_cast<size_t>(y) * W + x] = acc;
        }
}

// Smooth bright/dark mask: half-plane or radial blob, blurred. The bright
// region always covers a meaningful area fraction so both histogram modes
// get mass.
std::vector<float> backlit_mask(int H, int W, double sigma_frac, Rng& rng) {
    std::vector<float> m(static_cast<size_t>(H) * W, 0.0f);
    if (rng.uniform() < 0.5) {
        double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        double nx = std::cos(theta), ny = std::sin(theta);
        double offset = rng.uniform(-0.2, 0.2);  // keeps the split near 25..75%
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double px = (x + 0.5) / W - 0.5, py = (y + 0.5) / H - 0.5;
                m[static_cast<size_t>(y) * W + x] = (nx * px + ny * py > offset) ? 1.0f : 0.0f;
            }
    } else {
        double cx = rng.uniform(0.3, 0.7), cy = rng.uniform(0.3, 0.7);
        double radius = rng.uniform(0.28, 0.45);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double px = (x + 0.5) / W - cx, py = (y + 0.5) / H - cy;
                m[static_cast<size_t>(y) * W + x] =
                    (std::sqrt(px * px + py * py) < radius) ? 1.0f : 0.0f;
            }
    }
    gaussian_blur(m, H, W, sigma_frac * std::min(H, W));
    return m;
}

}  // namespace

Image degrade_backlit(const Image& clean, const DegradationSpec& spec, Rng& rng) {
    const int H = clean.height(), W = clean.width();
    std::vector<float> mask = backlit_mask(H, W, spec.mask_sigma, rng);
    Array<float> out(clean.data.shape);
    for (int p = 0; p < H * W; ++p) {
        float m = mask[static_cast<size_t>(p)];
        for (int c = 0; c < 3; ++c) {
            float v = clean.data.v[static_cast<size_t>(p) * 3 + c];
            float hi = std::clamp(static_cast<float>(spec.g_hi) * v, 0.0f, 1.0f);
            float lo = static_cast<float>(spec.g_lo) * v;
            out.v[static_cast<size_t>(p) * 3 + c] = std::clamp(m * hi + (1 - m) * lo, 0.0f, 1.0f);
        }
    }
    return Image::from_array(std::move(out));
}

Image generate_clean_image(Rng& rng, int height, int width) {
    Array<float> img({height, width, 3});
    // smooth base gradient per channel; exposure kept concentrated the way
    // a well-metered photo is, so degradations land in clean histogram modes
    double base_v = rng.uniform(0.5, 0.7);
    for (int c = 0; c < 3; ++c) {
        double base = base_v + rng.uniform(-0.06, 0.06);
        double gx = rng.uniform(-0.12, 0.12), gy = rng.uniform(-0.12, 0.12);
        double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
        double amp = rng.uniform(0.02, 0.06);
        double phase = rng.uniform(0.0, 6.28);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double u = (x + 0.5) / width, v = (y + 0.5) / height;
                double val = base + gx * (u - 0.5) + gy * (v - 0.5) +
                             amp * std::sin(fx * 6.28318 * u + fy * 6.28318 * v + phase);
                img.at(y, x, c) = static_cast<float>(val);
            }
    }
    // a few soft-edged shapes with their own albedo
    int shapes = rng.uniform_int(2, 4);
    for (int s = 0; s < shapes; ++s) {
        double cx = rng.uniform(0.15, 0.85), cy = rng.uniform(0.15, 0.85);
        double rx = rng.uniform(0.08, 0.3), ry = rng.uniform(0.08, 0.3);
        double edge = rng.uniform(0.02, 0.08);
        double tone = rng.uniform(0.4, 0.85);
        float albedo[3];
        for (auto& a : albedo) a = static_cast<float>(std::clamp(tone + rng.uniform(-0.08, 0.08), 0.05, 0.95));
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double u = (x + 0.5) / width - cx, v = (y + 0.5) / height - cy;
                double d = std::sqrt((u / rx) * (u / rx) + (v / ry) * (v / ry));
                double a = std::clamp((1.0 - d) / edge, 0.0, 1.0);
                if (a <= 0) continue;
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = static_cast<float>((1 - a) * img.at(y, x, c) + a * albedo[c]);
            }
    }
    // mild sensor-like texture
    for (auto& v : img.v)
        v = std::clamp(v + static_cast<float>(rng.normal() * 0.008), 0.03f, 0.97f);
    return Image::from_array(std::move(img));
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

const char* kind_str(DegradationSpec::Kind k) {
    return k == DegradationSpec::Kind::LowLight ? "lowlight" : "backlit";
}

}  // namespace

void write_manifest(const Manifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write manifest " + path);
    f << "id\tkind\tgamma\tscale\tnoise\tg_hi\tg_lo\tmask\tdegraded_path\tclean_path\n";
    for (const auto& r : m.rows) {
        f << r.id << '\t' << kind_str(r.spec.kind) << '\t' << fmt_double(r.spec.gamma) << '\t'
          << fmt_double(r.spec.scale) << '\t' << fmt_double(r.spec.noise) << '\t'
          << fmt_double(r.spec.g_hi) << '\t' << fmt_double(r.spec.g_lo) << '\t'
          << fmt_double(r.spec.mask_sigma) << '\t' << r.degraded_path << '\t' << r.clean_path
          << '\n';
    }
    if (!f.good()) throw IoError("write error on manifest " + path);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read manifest " + path);
    Manifest m;
    std::string line;
    bool header = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        std::istringstream ls(line);
        ManifestRow r;
        std::string kind;
        ls >> r.id >> kind >> r.spec.gamma >> r.spec.scale >> r.spec.noise >> r.spec.g_hi >>
            r.spec.g_lo >> r.spec.mask_sigma >> r.degraded_path >> r.clean_path;
        if (ls.fail()) throw FormatError("manifest: bad row: " + line);
        r.spec.kind = (kind == "lowlight") ? DegradationSpec::Kind::LowLight
                                           : DegradationSpec::Kind::Backlit;
        m.rows.push_back(std::move(r));
    }
    return m;
}

Manifest build_dataset(const std::string& clean_dir, int n_low, int n_back, uint64_t seed,
                       const std::string& out_dir) {
    if (n_low < 0 || n_back < 0) throw ConfigError("build_dataset: counts must be >= 0");
    std::vector<fs::path> sources;
    if (!fs::is_directory(clean_dir)) throw IoError("clean dir not found: " + clean_dir);
    for (const auto& e : fs::directory_iterator(clean_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") sources.push_back(e.path());
    std::sort(sources.begin(), sources.end());
    if (sources.empty()) throw IoError("no .png images in clean dir " + clean_dir);

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "degraded", ec);
    fs::create_directories(fs::path(out_dir) / "clean", ec);
    if (!fs::is_directory(fs::path(out_dir) / "degraded"))
        throw IoError("cannot create output dir " + out_dir);

    const int total = n_low + n_back;
    Manifest manifest;
    manifest.rows.resize(static_cast<size_t>(total));

    auto make_pair = [&](int id) {
        Rng rng = Rng::substream(seed, static_cast<uint64_t>(id));
        const fs::path& src = sources[static_cast<size_t>(rng.uniform_int(
            0, static_cast<int>(sources.size()) - 1))];
        Image clean = load_image(src.string());
        ManifestRow row;
        row.id = id;
        Image degraded;
        if (id < n_low) {
            row.spec = DegradationSpec::sample_lowlight(rng);
            degraded = degrade_lowlight(clean, row.spec, rng);
        } else {
            row.spec = DegradationSpec::sample_backlit(rng);
            degraded = degrade_backlit(clean, row.spec, rng);
        }
        char name[32];
        std::snprintf(name, sizeof(name), "pair_%05d.png", id);
        row.degraded_path = std::string("degraded/") + name;
        row.clean_path = std::string("clean/") + name;
        save_image(degraded, (fs::path(out_dir) / row.degraded_path).string());
        save_image(clean, (fs::path(out_dir) / row.clean_path).string());
        manifest.rows[static_cast<size_t>(id)] = std::move(row);
    };

    int threads = 1;
    if (const char* env = std::getenv("DIME_THREADS")) threads = std::max(1, std::atoi(env));
    threads = std::min<int>(threads, std::max(1, total));
    if (threads <= 1 || total == 0) {
        for (int id = 0; id < total; ++id) make_pair(id);
    } else {
        // pairs are independent (per-pair substreams), so striping across
        // threads yields bit-identical outputs
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (int id = w; id < total; id += threads) make_pair(id);
            });
        for (auto& th : pool) th.join();
    }

    write_manifest(manifest, (fs::path(out_dir) / "manifest.tsv").string());
    return manifest;
}

PairLoadReport load_paired_dir(const std::string& degraded_dir, const std::string& clean_dir) {
    auto list_pngs = [](const std::string& dir) {
        if (!fs::is_directory(dir)) throw IoError("directory not found: " + dir);
        std::map<std::string, fs::path> out;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png")
                out.emplace(e.path().filename().string(), e.path());
        return out;
    };
    auto degraded = list_pngs(degraded_dir);
    auto clean = list_pngs(clean_dir);

    PairLoadReport report;
    for (const auto& [name, dpath] : degraded) {
        auto it = clean.find(name);
        if (it == clean.end()) {
            report.skipped.push_back(name + ": no matching clean image");
            continue;
        }
        Image d = load_image(dpath.string());
        Image c = load_image(it->second.string());
        if (d.data.shape != c.data.shape) {
            report.skipped.push_back(name + ": size mismatch " + shape_str(d.data.shape) + " vs " +
                                     shape_str(c.data.shape));
            continue;
        }
        report.pairs.push_back({std::move(d), std::move(c), name});
    }
    for (const auto& [name, cpath] : clean)
        if (!degraded.count(name)) report.skipped.push_back(name + ": no matching degraded image");

    if (report.pairs.empty()) throw IoError("no matching image pairs between " + degraded_dir +
                                            " and " + clean_dir);
    return report;
}

}  // namespace dime
