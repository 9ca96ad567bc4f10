// dime: Retinex + sparse-MoE dual-illumination enhancement toolkit.
//
// Subcommands: synth, train, enhance, eval, analyze, gradcheck.
// Exit codes: 0 ok, 2 bad config key/value, 3 missing or unreadable path,
// 4 checkpoint/config mismatch, 1 anything else.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dime/checkpoint.hpp"
#include "dime/config.hpp"
#include "dime/datasynth.hpp"
#include "dime/gradcheck.hpp"
#include "dime/png_io.hpp"
#include "dime/training.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts, const dime::Config& cfg) {
    cmd->add_option("--config", opts.config_file, "configuration file (key = value lines)");
    cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set moe.k=8")
        ->expected(-1);
    cmd->footer(cfg.help_text());
}

dime::Config resolve_config(const CommonOpts& opts) {
    dime::Config cfg;
    if (!opts.config_file.empty()) cfg.load_file(opts.config_file);
    for (const auto& kv : opts.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw dime::ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void echo_config(const dime::Config& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    cfg.save_file((fs::path(out_dir) / "effective_config.txt").string());
}

std::vector<fs::path> list_pngs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw dime::IoError("directory not found: " + dir);
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

dime::TrainConfig train_config_from(const dime::Config& cfg) {
    dime::TrainConfig t;
    t.iterations = cfg.get_int("train.iterations");
    t.batch_size = cfg.get_int("train.batch_size");
    t.patch = cfg.get_int("train.patch");
    t.lr_init = cfg.get_double("train.lr_init");
    t.lr_final = cfg.get_double("train.lr_final");
    t.beta1 = cfg.get_double("train.beta1");
    t.beta2 = cfg.get_double("train.beta2");
    t.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    t.mixup = cfg.get_bool("train.mixup");
    t.rotation = cfg.get_bool("train.rotation");
    t.flip = cfg.get_bool("train.flip");
    t.mixup_alpha = cfg.get_double("train.mixup_alpha");
    t.grad_clip = cfg.get_double("train.grad_clip");
    t.grad_clip_enabled = cfg.get_bool("train.grad_clip_enabled");
    t.checkpoint_every = cfg.get_int("train.checkpoint_every");
    t.log_every = cfg.get_int("train.log_every");
    t.weights.l1 = cfg.get_double("train.loss_w_l1");
    t.weights.ssim = cfg.get_double("train.loss_w_ssim");
    t.weights.perc = cfg.get_double("train.loss_w_perc");
    t.balance_loss_weight = cfg.get_double("moe.balance_loss_weight");
    return t;
}

std::vector<dime::TrainSample> load_dataset_root(const std::string& root) {
    auto manifest = dime::read_manifest((fs::path(root) / "manifest.tsv").string());
    std::vector<dime::TrainSample> out;
    out.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) {
        dime::TrainSample s;
        s.degraded = dime::load_image((fs::path(root) / row.degraded_path).string()).data;
        s.clean = dime::load_image((fs::path(root) / row.clean_path).string()).data;
        s.id = std::to_string(row.id);
        out.push_back(std::move(s));
    }
    return out;
}

int cmd_synth(const CommonOpts& common, const std::string& clean_dir, const std::string& out_dir,
              int n_low, int n_back, int seed_flag, int demo_clean, int demo_size) {
    dime::Config cfg = resolve_config(common);
    if (n_low >= 0) cfg.set("data.n_low", std::to_string(n_low));
    if (n_back >= 0) cfg.set("data.n_back", std::to_string(n_back));
    if (seed_flag >= 0) cfg.set("data.seed", std::to_string(seed_flag));
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("data.seed"));

    if (demo_clean > 0 && (!fs::is_directory(clean_dir) || list_pngs(clean_dir).empty())) {
        fs::create_directories(clean_dir);
        dime::Rng rng(seed ^ 0xdeadbeefULL);
        for (int i = 0; i < demo_clean; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "demo_%03d.png", i);
            dime::save_image(dime::generate_clean_image(rng, demo_size, demo_size),
                             (fs::path(clean_dir) / name).string());
        }
        std::cout << "generated " << demo_clean << " demo clean images in " << clean_dir << "\n";
    }

    auto manifest = dime::build_dataset(clean_dir, cfg.get_int("data.n_low"),
                                        cfg.get_int("data.n_back"), seed, out_dir);
    echo_config(cfg, out_dir);
    std::cout << "wrote " << manifest.rows.size() << " pairs to " << out_dir << "\n";
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& data_root,
              const std::string& degraded_dir, const std::string& clean_dir,
              const std::string& out_dir) {
    dime::Config cfg = resolve_config(common);

    std::vector<dime::TrainSample> dataset;
    if (!data_root.empty()) {
        dataset = load_dataset_root(data_root);
    } else if (!degraded_dir.empty() && !clean_dir.empty()) {
        auto report = dime::load_paired_dir(degraded_dir, clean_dir);
        for (const auto& skip : report.skipped) std::cerr << "skipped " << skip << "\n";
        for (auto& p : report.pairs)
            dataset.push_back({std::move(p.degraded.data), std::move(p.clean.data), p.name});
    } else {
        throw dime::ConfigError("train: pass --data ROOT or both --degraded and --clean");
    }
    if (dataset.empty()) throw dime::IoError("train: dataset is empty");

    dime::TrainConfig tcfg = train_config_from(cfg);
    for (const auto& s : dataset)
        if (s.degraded.shape[0] < tcfg.patch || s.degraded.shape[1] < tcfg.patch)
            throw dime::ConfigError("train: patch " + std::to_string(tcfg.patch) +
                                    " exceeds image " + dime::shape_str(s.degraded.shape));

    dime::DimeNet<float> model(dime::build_model_config(cfg));
    echo_config(cfg, out_dir);
    std::ofstream log((fs::path(out_dir) / "train.log").string(), std::ios::trunc);
    std::ofstream csv((fs::path(out_dir) / "train.csv").string(), std::ios::trunc);

    auto checkpoint_cb = [&](int64_t iter, const dime::Rng& rng) {
        dime::CheckpointMeta meta;
        meta.iteration = iter;
        meta.rng_state = rng.state_string();
        std::string name = (iter >= tcfg.iterations) ? "model.ckpt"
                                                     : "ckpt_" + std::to_string(iter) + ".ckpt";
        dime::save_checkpoint(model, cfg, meta, (fs::path(out_dir) / name).string());
    };
    auto result = dime::train(model, dataset, tcfg, &log, &csv, checkpoint_cb);
    std::cout << "trained " << tcfg.iterations << " iterations; final train psnr="
              << result.records.back().psnr << " dB; checkpoint " << out_dir << "/model.ckpt\n";
    return 0;
}

int cmd_enhance(const CommonOpts& common, const std::string& ckpt, const std::string& in_dir,
                const std::string& out_dir) {
    dime::Config cli_cfg = resolve_config(common);
    dime::Config cfg;
    dime::DimeNet<float> model = dime::load_checkpoint(ckpt, &cli_cfg, &cfg);
    auto files = list_pngs(in_dir);
    if (files.empty()) throw dime::IoError("no .png images in " + in_dir);
    fs::create_directories(out_dir);
    echo_config(cfg, out_dir);
    for (const auto& f : files) {
        dime::Image out = model.enhance(dime::load_image(f.string()));
        auto dst = fs::path(out_dir) / f.filename();
        dime::save_image(out, dst.string());
        std::cout << f.string() << " -> " << dst.string() << "\n";
    }
    return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& ckpt, const std::string& degraded_dir,
             const std::string& clean_dir, const std::string& out_dir) {
    dime::Config cli_cfg = resolve_config(common);
    dime::Config cfg;
    dime::DimeNet<float> model = dime::load_checkpoint(ckpt, &cli_cfg, &cfg);
    auto report = dime::load_paired_dir(degraded_dir, clean_dir);
    for (const auto& skip : report.skipped) std::cerr << "skipped " << skip << "\n";

    fs::create_directories(out_dir);
    echo_config(cfg, out_dir);
    std::ofstream tsv((fs::path(out_dir) / "eval.tsv").string(), std::ios::trunc);
    tsv << "path\tpsnr\tssim\n";
    dime::MetricReport metrics;
    for (const auto& pair : report.pairs) {
        dime::Image enhanced = model.enhance(pair.degraded);
        double p = dime::psnr(enhanced.data, pair.clean.data);
        double s = dime::ssim(enhanced.data, pair.clean.data);
        metrics.add(pair.name, p, s);
        tsv << pair.name << "\t" << p << "\t" << s << "\n";
    }
    tsv << "mean\t" << metrics.mean_psnr << "\t" << metrics.mean_ssim << "\n";
    std::cout << "eval " << metrics.entries.size() << " pairs: mean psnr=" << metrics.mean_psnr
              << " dB, mean ssim=" << metrics.mean_ssim << "\n";
    return 0;
}

int cmd_analyze(const CommonOpts& common, const std::string& in_dir, const std::string& csv_path) {
    dime::Config cfg = resolve_config(common);
    auto files = list_pngs(in_dir);
    if (files.empty()) throw dime::IoError("no .png images in " + in_dir);

    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path, std::ios::trunc);
        if (!csv) throw dime::IoError("cannot write " + csv_path);
        csv << "path,label,peaks";
        for (int b = 0; b < cfg.get_int("analyze.bins"); ++b) csv << ",bin" << b;
        csv << "\n";
    }
    for (const auto& f : files) {
        auto hist = dime::v_histogram(dime::load_image(f.string()), cfg.get_int("analyze.bins"),
                                      cfg.get_int("analyze.smooth_width"),
                                      cfg.get_double("analyze.peak_threshold"));
        auto label = dime::classify_illumination(hist, cfg.get_double("analyze.low_boundary"),
                                                 cfg.get_double("analyze.high_boundary"));
        std::string peaks;
        for (size_t i = 0; i < hist.peak_positions.size(); ++i) {
            if (i) peaks += ",";
            peaks += std::to_string(hist.peak_positions[i]);
        }
        std::cout << f.string() << "\t" << dime::to_string(label) << "\t" << peaks << "\n";
        if (csv.is_open()) {
            csv << f.string() << "," << dime::to_string(label) << ",\"" << peaks << "\"";
            for (float b : hist.bins) csv << "," << b;
            csv << "\n";
        }
    }
    return 0;
}

int cmd_gradcheck(double h, double tol) {
    auto results = dime::run_gradcheck_suite(h, tol);
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << " " << r.fragment
                  << " max_rel_err=" << r.max_rel_err << " worst=" << r.worst_tensor << "["
                  << r.worst_index << "]";
        if (!r.note.empty()) std::cout << " (" << r.note << ")";
        std::cout << "\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dime: dual-illumination image enhancement (Retinex + sparse S-curve MoE)"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "dime 1.0.0");
    dime::Config defaults;

    // synth
    CommonOpts synth_common;
    std::string synth_clean, synth_out;
    int synth_n_low = -1, synth_n_back = -1, synth_seed = -1, demo_clean = 0, demo_size = 128;
    auto* synth = app.add_subcommand("synth", "generate a synthetic degraded/clean dataset");
    synth->add_option("--clean", synth_clean, "directory of clean source images")->required();
    synth->add_option("--out", synth_out, "output dataset root")->required();
    synth->add_option("--n-low", synth_n_low, "low-light pairs (default data.n_low)");
    synth->add_option("--n-back", synth_n_back, "backlit pairs (default data.n_back)");
    synth->add_option("--seed", synth_seed, "generation seed (default data.seed)");
    synth->add_option("--demo-clean", demo_clean,
                      "generate this many procedural clean images if --clean is missing/empty");
    synth->add_option("--demo-size", demo_size, "demo clean image size");
    add_common(synth, synth_common, defaults);

    // train
    CommonOpts train_common;
    std::string train_data, train_degraded, train_clean, train_out;
    auto* train = app.add_subcommand("train", "train a model on a paired dataset");
    train->add_option("--data", train_data, "dataset root containing manifest.tsv");
    train->add_option("--degraded", train_degraded, "degraded image dir (with --clean)");
    train->add_option("--clean", train_clean, "clean image dir (with --degraded)");
    train->add_option("--out", train_out, "output dir (logs, checkpoints)")->required();
    add_common(train, train_common, defaults);

    // enhance
    CommonOpts enh_common;
    std::string enh_ckpt, enh_in, enh_out;
    auto* enhance = app.add_subcommand("enhance", "enhance a directory of images");
    enhance->add_option("--checkpoint", enh_ckpt, "trained checkpoint")->required();
    enhance->add_option("--in", enh_in, "input image dir")->required();
    enhance->add_option("--out", enh_out, "output image dir")->required();
    add_common(enhance, enh_common, defaults);

    // eval
    CommonOpts eval_common;
    std::string eval_ckpt, eval_degraded, eval_clean, eval_out;
    auto* eval = app.add_subcommand("eval", "enhance and score against a clean reference dir");
    eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    eval->add_option("--degraded", eval_degraded, "degraded image dir")->required();
    eval->add_option("--clean", eval_clean, "clean reference dir")->required();
    eval->add_option("--out", eval_out, "output dir for eval.tsv")->required();
    add_common(eval, eval_common, defaults);

    // analyze
    CommonOpts ana_common;
    std::string ana_in, ana_csv;
    auto* analyze = app.add_subcommand("analyze", "V-histogram peaks and illumination labels");
    analyze->add_option("--in", ana_in, "input image dir")->required();
    analyze->add_option("--csv", ana_csv, "also write per-image histogram bins as CSV");
    add_common(analyze, ana_common, defaults);

    // gradcheck
    double gc_tol = 1e-4, gc_h = 1e-5;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--tol", gc_tol, "max relative error to pass");
    gradcheck->add_option("--h", gc_h, "central difference step");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(synth_common, synth_clean, synth_out, synth_n_low, synth_n_back,
                             synth_seed, demo_clean, demo_size);
        if (train->parsed())
            return cmd_train(train_common, train_data, train_degraded, train_clean, train_out);
        if (enhance->parsed()) return cmd_enhance(enh_common, enh_ckpt, enh_in, enh_out);
        if (eval->parsed())
            return cmd_eval(eval_common, eval_ckpt, eval_degraded, eval_clean, eval_out);
        if (analyze->parsed()) return cmd_analyze(ana_common, ana_in, ana_csv);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_h, gc_tol);
    } catch (const dime::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dime::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const dime::CheckpointError& e) {
        if (e.kind() == dime::CheckpointError::Kind::ConfigMismatch) {
            std::cerr << "checkpoint mismatch: " << e.what() << "\n";
            return 4;
        }
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
