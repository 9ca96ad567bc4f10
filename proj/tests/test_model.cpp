#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dime/checkpoint.hpp"
#include "dime/core/rng.hpp"

using dime::DimeNet;
using dime::Image;
using dime::Tensor;

namespace {

Image random_image(dime::Rng& rng, int H, int W) {
    dime::Array<float> a({H, W, 3});
    for (auto& v : a.v) v = static_cast<float>(rng.uniform());
    return Image::from_array(std::move(a));
}

DimeNet<float>::Config mini_cfg() {
    DimeNet<float>::Config cfg;
    cfg.moe.num_experts = 4;
    cfg.moe.k = 2;
    cfg.moe.feat_channels = 4;
    cfg.restorer.base_channels = 4;
    cfg.restorer.depth = 2;
    cfg.restorer.dscam_blocks = 1;
    cfg.restorer.heads = 2;
    cfg.restorer.d_state = 3;
    cfg.init_seed = 11;
    return cfg;
}

void randomize_params(const DimeNet<float>& model, dime::Rng& r, float scale = 0.2f) {
    for (auto& [name, p] : model.named_params()) {
        bool is_ln_gain = name.find("ln") != std::string::npos && name.ends_with(".g");
        bool is_A = name.ends_with("A");
        auto pp = p;
        for (auto& v : pp.mutable_value().v) {
            if (is_ln_gain)
                v = static_cast<float>(r.uniform(0.8, 1.2));
            else if (is_A)
                v = static_cast<float>(r.uniform(-1.5, -0.1));
            else
                v = static_cast<float>(r.uniform(-scale, scale));
        }
    }
}

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::filesystem::path tmp_dir() {
    auto d = std::filesystem::temp_directory_path() / "dime_model_test";
    std::filesystem::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("compose_retinex identities and loop oracle") {
    dime::Rng r(1);
    dime::Array<double> R({4, 4, 3}), L({4, 4, 3});
    for (auto& v : R.v) v = r.uniform();
    for (auto& v : L.v) v = r.uniform(0.2, 2.0);

    dime::Array<double> ones({4, 4, 3}, 1.0);
    auto idr = dime::compose_retinex(R, ones);
    CHECK(idr.v == R.v);

    dime::Array<double> zeros({4, 4, 3}, 0.0);
    auto absorbed = dime::compose_retinex(zeros, L);
    for (double v : absorbed.v) CHECK(v == 0.0);

    auto got = dime::compose_retinex(R, L);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c)
                CHECK(got.at(y, x, c) == doctest::Approx(R.at(y, x, c) * L.at(y, x, c)).epsilon(1e-12));

    dime::Array<double> other({4, 5, 3}, 1.0);
    CHECK_THROWS_AS(dime::compose_retinex(R, other), dime::ShapeError);
    CHECK_THROWS_AS(dime::compose_retinex(R, zeros), dime::Error);
}

TEST_CASE("untrained model is the identity, including the padded path") {
    DimeNet<float> model(mini_cfg());
    dime::Rng r(42);
    for (int trial = 0; trial < 10; ++trial) {
        int H = 16 + static_cast<int>(r.next_u64() % 49);  // 16..64, often not divisible by 4
        int W = 16 + static_cast<int>(r.next_u64() % 49);
        Image img = random_image(r, H, W);
        Image out = model.enhance(img);
        float max_err = 0;
        for (size_t i = 0; i < img.data.v.size(); ++i)
            max_err = std::max(max_err, std::abs(img.data.v[i] - out.data.v[i]));
        INFO("H=" << H << " W=" << W << " err=" << max_err);
        CHECK(max_err < 1e-6f);
    }
}

TEST_CASE("enhance output is always in [0,1], even with random parameters") {
    DimeNet<float> model(mini_cfg());
    dime::Rng pr(7);
    randomize_params(model, pr);
    dime::Rng r(9);
    for (int trial = 0; trial < 5; ++trial) {
        Image img = random_image(r, 24, 20);
        Image out = model.enhance(img);
        for (float v : out.data.v) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("enhance is deterministic (gating noise never runs at inference)") {
    auto cfg = mini_cfg();
    cfg.moe.noise = true;
    DimeNet<float> model(cfg);
    dime::Rng pr(13);
    randomize_params(model, pr);
    dime::Rng r(15);
    Image img = random_image(r, 20, 28);
    Image a = model.enhance(img);
    Image b = model.enhance(img);
    CHECK(a.data.v == b.data.v);
}

TEST_CASE("no_restorer ablation returns clamp(img * L_bar)") {
    auto cfg = mini_cfg();
    cfg.ablation.no_restorer = true;
    DimeNet<float> model(cfg);
    dime::Rng pr(17);
    randomize_params(model, pr);
    dime::Rng r(19);
    Image img = random_image(r, 16, 16);

    Image out = model.enhance(img);

    dime::NoGradGuard ng;
    Tensor<float> x(img.data, false);
    auto est = model.estimator()->forward(x, nullptr);
    for (int i = 0; i < static_cast<int>(img.data.v.size()); ++i) {
        float expect = std::clamp(img.data.v[static_cast<size_t>(i)] *
                                      est.l_bar.value().v[static_cast<size_t>(i)],
                                  0.0f, 1.0f);
        CHECK(out.data.v[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("no_estimator ablation forces L_bar to one") {
    auto cfg = mini_cfg();
    cfg.ablation.no_estimator = true;
    DimeNet<float> model(cfg);
    dime::Rng r(21);
    Image img = random_image(r, 16, 16);
    Tensor<float> x(img.data, false);
    auto fwd = model.forward(x, nullptr);
    for (float v : fwd.l_bar.value().v) CHECK(v == 1.0f);
    CHECK(fwd.lit.value().v == img.data.v);
    bool has_fallback = false;
    for (auto& [name, p] : model.named_params()) has_fallback |= name == "fallback.w";
    CHECK(has_fallback);
}

TEST_CASE("expert-bank ablations reshape the n values") {
    auto cfg = mini_cfg();
    cfg.ablation.all_n_below_1 = true;
    DimeNet<float> below(cfg);
    for (const auto& e : below.estimator()->experts()) CHECK(e.n < 1.0);

    cfg.ablation.all_n_below_1 = false;
    cfg.ablation.all_n_above_1 = true;
    DimeNet<float> above(cfg);
    for (const auto& e : above.estimator()->experts()) CHECK(e.n > 1.0);

    cfg.ablation.all_n_below_1 = true;
    CHECK_THROWS_AS((void)DimeNet<float>(cfg), dime::ConfigError);
}

TEST_CASE("no_moe ablation keeps the estimator but changes the head input") {
    auto cfg = mini_cfg();
    cfg.ablation.no_moe = true;
    DimeNet<float> model(cfg);
    dime::Rng pr(23);
    randomize_params(model, pr);
    dime::Rng r(25);
    Image img = random_image(r, 16, 16);
    Image out = model.enhance(img);  // must run end to end
    CHECK(out.height() == 16);
    int64_t evals = model.estimator()->expert_evals;
    CHECK(evals == 0);  // no expert was evaluated
}

TEST_CASE("every named parameter is reachable and gets a finite gradient") {
    DimeNet<float> model(mini_cfg());
    dime::Rng pr(27);
    randomize_params(model, pr);

    auto params = model.named_params();
    std::set<std::string> names;
    for (auto& [n, p] : params) CHECK(names.insert(n).second);  // unique

    dime::Rng r(29);
    Image img = random_image(r, 16, 16);
    Tensor<float> x(img.data, false);
    dime::Rng noise(31);  // training-style forward so the noise path participates
    auto fwd = model.forward(x, &noise);
    dime::Array<float> proj_a({16, 16, 3});
    for (auto& v : proj_a.v) v = static_cast<float>(r.uniform(-1, 1));
    auto loss = dime::mean_all(dime::mul(fwd.pred, Tensor<float>(std::move(proj_a), false)));
    loss.backward();
    int with_grad = 0;
    for (auto& [n, p] : params) {
        if (p.has_grad()) {
            ++with_grad;
            for (float g : p.grad()) CHECK(std::isfinite(g));
        }
    }
    CHECK(with_grad == static_cast<int>(params.size()));
}

TEST_CASE("checkpoint round trip is bit-exact and enhance is unchanged") {
    auto dir = tmp_dir();
    DimeNet<float> model(mini_cfg());
    dime::Rng pr(31);
    randomize_params(model, pr);

    dime::Config cfg;
    cfg.set("moe.num_experts", "4");
    cfg.set("moe.k", "2");
    cfg.set("moe.feat_channels", "4");
    cfg.set("restorer.base_channels", "4");
    cfg.set("restorer.depth", "2");
    cfg.set("restorer.dscam_blocks", "1");
    cfg.set("restorer.heads", "2");
    cfg.set("restorer.d_state", "3");
    cfg.set("model.init_seed", "11");

    dime::Rng r(33);
    Image img = random_image(r, 20, 24);
    Image before = model.enhance(img);

    auto p1 = (dir / "a.ckpt").string();
    auto p2 = (dir / "b.ckpt").string();
    dime::CheckpointMeta meta;
    meta.iteration = 123;
    meta.rng_state = dime::Rng(5).state_string();
    dime::save_checkpoint(model, cfg, meta, p1);

    dime::Config cfg_out;
    dime::CheckpointMeta meta_out;
    DimeNet<float> loaded = dime::load_checkpoint(p1, nullptr, &cfg_out, &meta_out);
    CHECK(meta_out.iteration == 123);
    CHECK(meta_out.rng_state == meta.rng_state);
    CHECK(cfg_out.get("moe.num_experts") == "4");

    // parameters bit-exact
    auto pa = model.named_params();
    auto pb = loaded.named_params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second.value().v == pb[i].second.value().v);
    }

    dime::save_checkpoint(loaded, cfg_out, meta_out, p2);
    CHECK(read_bytes(p1) == read_bytes(p2));  // save-load-save idempotence

    Image after = loaded.enhance(img);
    CHECK(before.data.v == after.data.v);  // bitwise
}

TEST_CASE("checkpoint config mismatch names the differing key") {
    auto dir = tmp_dir();
    DimeNet<float> model(mini_cfg());
    dime::Config cfg;
    cfg.set("moe.num_experts", "4");
    cfg.set("moe.k", "2");
    cfg.set("moe.feat_channels", "4");
    cfg.set("restorer.base_channels", "4");
    cfg.set("restorer.dscam_blocks", "1");
    cfg.set("restorer.heads", "2");
    cfg.set("restorer.d_state", "3");
    auto p = (dir / "c.ckpt").string();
    dime::save_checkpoint(model, cfg, {}, p);

    dime::Config wanted;
    wanted.set("moe.num_experts", "8");  // differs from snapshot
    try {
        dime::load_checkpoint(p, &wanted);
        FAIL("expected CheckpointError");
    } catch (const dime::CheckpointError& e) {
        CHECK(e.kind() == dime::CheckpointError::Kind::ConfigMismatch);
        CHECK(std::string(e.what()).find("moe.num_experts") != std::string::npos);
    }

    // non-architecture keys may differ freely
    dime::Config train_only;
    train_only.set("train.iterations", "5");
    CHECK_NOTHROW(dime::load_checkpoint(p, &train_only));
}

TEST_CASE("corrupt checkpoints raise distinct errors") {
    auto dir = tmp_dir();
    DimeNet<float> model(mini_cfg());
    dime::Config cfg;
    cfg.set("moe.num_experts", "4");
    cfg.set("moe.k", "2");
    cfg.set("moe.feat_channels", "4");
    cfg.set("restorer.base_channels", "4");
    cfg.set("restorer.dscam_blocks", "1");
    cfg.set("restorer.heads", "2");
    cfg.set("restorer.d_state", "3");
    auto p = (dir / "d.ckpt").string();
    dime::save_checkpoint(model, cfg, {}, p);
    auto bytes = read_bytes(p);

    auto write_tmp = [&](std::vector<char> b, const char* name) {
        auto q = (dir / name).string();
        std::ofstream f(q, std::ios::binary | std::ios::trunc);
        f.write(b.data(), static_cast<std::streamsize>(b.size()));
        return q;
    };

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    try {
        dime::load_checkpoint(write_tmp(bad_magic, "bad_magic.ckpt"));
        FAIL("expected error");
    } catch (const dime::CheckpointError& e) {
        CHECK(e.kind() == dime::CheckpointError::Kind::CorruptHeader);
    }

    auto bad_version = bytes;
    bad_version[4] = 9;
    try {
        dime::load_checkpoint(write_tmp(bad_version, "bad_version.ckpt"));
        FAIL("expected error");
    } catch (const dime::CheckpointError& e) {
        CHECK(e.kind() == dime::CheckpointError::Kind::UnknownSchema);
    }

    auto truncated = bytes;
    truncated.resize(truncated.size() - 64);
    try {
        dime::load_checkpoint(write_tmp(truncated, "truncated.ckpt"));
        FAIL("expected error");
    } catch (const dime::CheckpointError& e) {
        CHECK(e.kind() == dime::CheckpointError::Kind::Truncated);
    }
}
