#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dime/config.hpp"

TEST_CASE("defaults match the documented values") {
    dime::Config cfg;
    CHECK(cfg.get_int("moe.num_experts") == 16);
    CHECK(cfg.get_int("moe.k") == 4);
    CHECK(cfg.get_double("moe.sigma") == 0.5);
    CHECK(cfg.get_int("restorer.base_channels") == 16);
    CHECK(cfg.get_int("restorer.depth") == 2);
    CHECK(cfg.get_double("train.lr_init") == 2e-4);
    CHECK(cfg.get_double("train.lr_final") == 1e-6);
    CHECK(cfg.get_double("train.loss_w_l1") == 1.0);
    CHECK(cfg.get_double("train.loss_w_ssim") == 0.5);
    CHECK(cfg.get_double("train.loss_w_perc") == 0.1);
    CHECK(cfg.get_int("train.batch_size") == 4);
    CHECK(cfg.get_double("train.mixup_alpha") == 0.2);
    CHECK(cfg.get_bool("train.mixup"));
    CHECK(cfg.get_list("moe.n_values").empty());
}

TEST_CASE("unknown keys are rejected with a nearest-match suggestion") {
    dime::Config cfg;
    try {
        cfg.set("moe.num_expert", "8");  // missing trailing s
        FAIL("expected ConfigError");
    } catch (const dime::ConfigError& e) {
        CHECK(std::string(e.what()).find("moe.num_experts") != std::string::npos);
    }
    CHECK_THROWS_AS(cfg.get("restorer.depht"), dime::ConfigError);
}

TEST_CASE("values are type-checked at set time") {
    dime::Config cfg;
    CHECK_THROWS_AS(cfg.set("moe.k", "four"), dime::ConfigError);
    CHECK_THROWS_AS(cfg.set("train.lr_init", "fast"), dime::ConfigError);
    CHECK_THROWS_AS(cfg.set("train.mixup", "maybe"), dime::ConfigError);
    CHECK_THROWS_AS(cfg.set("moe.n_values", "1.0,abc"), dime::ConfigError);
    cfg.set("moe.n_values", "0.5,1.5,2.5");
    auto xs = cfg.get_list("moe.n_values");
    REQUIRE(xs.size() == 3);
    CHECK(xs[1] == 1.5);
}

TEST_CASE("file round trip reproduces the configuration") {
    auto dir = std::filesystem::temp_directory_path() / "dime_config_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "cfg.txt").string();

    dime::Config cfg;
    cfg.set("moe.k", "8");
    cfg.set("train.iterations", "123");
    cfg.set("train.lr_init", "3.5e-4");
    cfg.save_file(path);

    dime::Config back;
    back.load_file(path);
    for (const auto& key : cfg.keys()) CHECK(back.get(key) == cfg.get(key));
    CHECK(back.is_explicit("moe.k"));
}

TEST_CASE("explicit tracking and differing keys") {
    dime::Config a, b;
    CHECK_FALSE(a.is_explicit("moe.k"));
    a.set("moe.k", "8");
    CHECK(a.is_explicit("moe.k"));
    b.set("moe.k", "2");
    b.set("train.seed", "99");
    auto diffs = dime::Config::differing_keys(a, b, dime::model_config_prefixes());
    REQUIRE(diffs.size() == 1);
    CHECK(diffs[0] == "moe.k");  // train.seed is not an architecture key
}

TEST_CASE("help text lists every key") {
    dime::Config cfg;
    auto help = cfg.help_text();
    for (const auto& key : cfg.keys()) CHECK(help.find(key) != std::string::npos);
}

TEST_CASE("config builds a valid model configuration") {
    dime::Config cfg;
    cfg.set("moe.num_experts", "4");
    cfg.set("moe.k", "2");
    cfg.set("moe.feat_channels", "4");
    cfg.set("restorer.base_channels", "4");
    cfg.set("restorer.dscam_blocks", "1");
    cfg.set("restorer.heads", "2");
    auto mc = dime::build_model_config(cfg);
    CHECK(mc.moe.num_experts == 4);
    CHECK(mc.restorer.feat_channels == 4);  // follows moe.feat_channels
    dime::DimeNet<float> model(mc);
    CHECK(model.named_params().size() > 0);
}

TEST_CASE("config file parse errors carry the line") {
    auto dir = std::filesystem::temp_directory_path() / "dime_config_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "bad.txt").string();
    {
        std::ofstream f(path);
        f << "# comment\nmoe.k 4\n";
    }
    CHECK_THROWS_AS(dime::Config().load_file(path), dime::ConfigError);
    CHECK_THROWS_AS(dime::Config().load_file("/nonexistent/cfg.txt"), dime::IoError);
}
