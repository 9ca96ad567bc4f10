#include "dime/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dime {
namespace {

struct KeySpec {
    const char* key;
    Config::Type type;
    const char* def;
    const char* help;
};

const KeySpec kRegistry[] = {
    {"moe.num_experts", Config::Type::Int, "16", "number of S-curve experts"},
    {"moe.k", Config::Type::Int, "4", "experts kept by the sparse gate"},
    {"moe.n_values", Config::Type::DoubleList, "",
     "explicit comma-separated expert exponents (empty = geometric over [0.2,5])"},
    {"moe.sigma", Config::Type::Double, "0.5", "curve midpoint shared by all experts"},
    {"moe.noise", Config::Type::Bool, "true", "gating noise during training"},
    {"moe.learnable_n", Config::Type::Bool, "false", "fine-tune expert exponents"},
    {"moe.balance_loss_weight", Config::Type::Double, "0",
     "importance (CV^2) balance loss weight; 0 disables"},
    {"moe.feat_channels", Config::Type::Int, "16", "illumination feature channels C_l"},
    {"restorer.base_channels", Config::Type::Int, "16", "U-Net base width C0"},
    {"restorer.depth", Config::Type::Int, "2", "stride-2 stages"},
    {"restorer.dscam_blocks", Config::Type::Int, "2", "DSCAM blocks at the bottleneck"},
    {"restorer.heads", Config::Type::Int, "4", "attention heads in IACA"},
    {"restorer.d_state", Config::Type::Int, "8", "state size of the selective scan"},
    {"restorer.per_direction_scan", Config::Type::Bool, "false",
     "independent scan parameters per direction"},
    {"ablation.no_moe", Config::Type::Bool, "false", "feed the raw image instead of the MoE mix"},
    {"ablation.all_n_below_1", Config::Type::Bool, "false", "expert bank limited to n < 1"},
    {"ablation.all_n_above_1", Config::Type::Bool, "false", "expert bank limited to n > 1"},
    {"ablation.no_estimator", Config::Type::Bool, "false",
     "L_bar forced to 1, fallback conv features"},
    {"ablation.no_restorer", Config::Type::Bool, "false", "skip the damage restorer"},
    {"model.init_seed", Config::Type::Int, "0", "parameter initialization seed"},
    {"train.iterations", Config::Type::Int, "2000", "training iterations"},
    {"train.batch_size", Config::Type::Int, "4", "patches per step"},
    {"train.patch", Config::Type::Int, "64", "square crop size"},
    {"train.lr_init", Config::Type::Double, "2e-4", "initial learning rate"},
    {"train.lr_final", Config::Type::Double, "1e-6", "final learning rate (cosine)"},
    {"train.beta1", Config::Type::Double, "0.9", "Adam beta1"},
    {"train.beta2", Config::Type::Double, "0.999", "Adam beta2"},
    {"train.seed", Config::Type::Int, "0", "training RNG seed"},
    {"train.mixup", Config::Type::Bool, "true", "mixup augmentation"},
    {"train.rotation", Config::Type::Bool, "true", "90-degree rotation augmentation"},
    {"train.flip", Config::Type::Bool, "true", "flip augmentation"},
    {"train.mixup_alpha", Config::Type::Double, "0.2", "Beta(alpha, alpha) mixup parameter"},
    {"train.grad_clip", Config::Type::Double, "1.0", "global gradient-norm clip"},
    {"train.grad_clip_enabled", Config::Type::Bool, "true", "enable gradient clipping"},
    {"train.checkpoint_every", Config::Type::Int, "500", "checkpoint interval (iterations)"},
    {"train.log_every", Config::Type::Int, "100", "log interval (iterations)"},
    {"train.loss_w_l1", Config::Type::Double, "1.0", "l1 loss weight"},
    {"train.loss_w_ssim", Config::Type::Double, "0.5", "SSIM loss weight"},
    {"train.loss_w_perc", Config::Type::Double, "0.1", "perceptual proxy loss weight"},
    {"data.seed", Config::Type::Int, "7", "dataset generation seed"},
    {"data.n_low", Config::Type::Int, "64", "low-light pairs to synthesize"},
    {"data.n_back", Config::Type::Int, "64", "backlit pairs to synthesize"},
    {"analyze.bins", Config::Type::Int, "64", "V-histogram bins"},
    {"analyze.smooth_width", Config::Type::Int, "5", "moving-average width (odd)"},
    {"analyze.peak_threshold", Config::Type::Double, "0.01",
     "peak prominence threshold (heuristic)"},
    {"analyze.low_boundary", Config::Type::Double, "0.33", "dark-region boundary (heuristic)"},
    {"analyze.high_boundary", Config::Type::Double, "0.66", "bright-region boundary (heuristic)"},
};

int edit_distance(const std::string& a, const std::string& b) {
    std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= b.size(); ++j) {
            int sub = prev[j - 1] + (a[i - 1] != b[j - 1]);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config::Config() {
    for (const auto& spec : kRegistry) {
        Entry e;
        e.value = spec.def;
        e.def = spec.def;
        e.type = spec.type;
        e.help = spec.help;
        entries_.emplace(spec.key, std::move(e));
    }
}

std::string Config::nearest_key(const std::string& key) const {
    std::string best;
    int best_d = 1 << 30;
    for (const auto& [k, e] : entries_) {
        int d = edit_distance(key, k);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

void Config::validate(const std::string& key, const Entry& e, const std::string& value) const {
    auto fail = [&](const char* what) {
        throw ConfigError("config key '" + key + "' expects " + what + ", got '" + value + "'");
    };
    switch (e.type) {
        case Type::Int: {
            char* end = nullptr;
            (void)std::strtol(value.c_str(), &end, 10);
            if (value.empty() || *end != '\0') fail("an integer");
            break;
        }
        case Type::Double: {
            char* end = nullptr;
            (void)std::strtod(value.c_str(), &end);
            if (value.empty() || *end != '\0') fail("a number");
            break;
        }
        case Type::Bool:
            if (value != "true" && value != "false" && value != "1" && value != "0")
                fail("true/false");
            break;
        case Type::DoubleList: {
            if (value.empty()) break;
            std::stringstream ss(value);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                char* end = nullptr;
                (void)std::strtod(tok.c_str(), &end);
                if (tok.empty() || *end != '\0') fail("a comma-separated number list");
            }
            break;
        }
        case Type::String: break;
    }
}

void Config::set(const std::string& key, const std::string& value, bool mark_explicit) {
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw ConfigError("unknown config key '" + key + "' (did you mean '" + nearest_key(key) +
                          "'?)");
    validate(key, it->second, value);
    it->second.value = value;
    if (mark_explicit) it->second.explicitly_set = true;
}

void Config::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void Config::save_file(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write config file " + path);
    f << "# effective configuration (pass back with --config to reproduce)\n";
    for (const auto& [k, e] : entries_) f << k << " = " << e.value << "\n";
    if (!f.good()) throw IoError("write error on " + path);
}

const std::string& Config::get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw ConfigError("unknown config key '" + key + "' (did you mean '" + nearest_key(key) +
                          "'?)");
    return it->second.value;
}

int Config::get_int(const std::string& key) const {
    return static_cast<int>(std::strtol(get(key).c_str(), nullptr, 10));
}

double Config::get_double(const std::string& key) const {
    return std::strtod(get(key).c_str(), nullptr);
}

bool Config::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    return v == "true" || v == "1";
}

std::vector<double> Config::get_list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(std::strtod(tok.c_str(), nullptr));
    }
    return out;
}

bool Config::is_explicit(const std::string& key) const {
    auto it = entries_.find(key);
    return it != entries_.end() && it->second.explicitly_set;
}

bool Config::has(const std::string& key) const { return entries_.count(key) != 0; }

std::vector<std::string> Config::keys() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, e] : entries_) out.push_back(k);
    return out;  // std::map keeps them sorted
}

std::string Config::help_text() const {
    std::ostringstream os;
    os << "Configuration keys (set via config file or --set key=value):\n";
    for (const auto& [k, e] : entries_) {
        os << "  " << k << " (default " << (e.def.empty() ? "<empty>" : e.def) << "): " << e.help
           << "\n";
    }
    return os.str();
}

std::vector<std::string> Config::differing_keys(const Config& a, const Config& b,
                                                const std::vector<std::string>& prefixes) {
    std::vector<std::string> out;
    for (const auto& [k, e] : a.entries_) {
        bool matched = false;
        for (const auto& p : prefixes) matched = matched || k.rfind(p, 0) == 0;
        if (!matched) continue;
        auto it = b.entries_.find(k);
        if (it != b.entries_.end() && it->second.value != e.value) out.push_back(k);
    }
    return out;
}

DimeNet<float>::Config build_model_config(const Config& cfg) {
    DimeNet<float>::Config m;
    m.moe.num_experts = cfg.get_int("moe.num_experts");
    m.moe.k = cfg.get_int("moe.k");
    m.moe.n_values = cfg.get_list("moe.n_values");
    m.moe.sigma = cfg.get_double("moe.sigma");
    m.moe.noise = cfg.get_bool("moe.noise");
    m.moe.learnable_n = cfg.get_bool("moe.learnable_n");
    m.moe.feat_channels = cfg.get_int("moe.feat_channels");
    m.restorer.base_channels = cfg.get_int("restorer.base_channels");
    m.restorer.depth = cfg.get_int("restorer.depth");
    m.restorer.dscam_blocks = cfg.get_int("restorer.dscam_blocks");
    m.restorer.heads = cfg.get_int("restorer.heads");
    m.restorer.d_state = cfg.get_int("restorer.d_state");
    m.restorer.per_direction_scan = cfg.get_bool("restorer.per_direction_scan");
    m.restorer.feat_channels = m.moe.feat_channels;
    m.ablation.no_moe = cfg.get_bool("ablation.no_moe");
    m.ablation.all_n_below_1 = cfg.get_bool("ablation.all_n_below_1");
    m.ablation.all_n_above_1 = cfg.get_bool("ablation.all_n_above_1");
    m.ablation.no_estimator = cfg.get_bool("ablation.no_estimator");
    m.ablation.no_restorer = cfg.get_bool("ablation.no_restorer");
    m.init_seed = static_cast<uint64_t>(cfg.get_int("model.init_seed"));
    return m;
}

}  // namespace dime
