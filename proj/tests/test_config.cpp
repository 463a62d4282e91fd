#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dmsr/config.hpp"

using namespace dmsr;

TEST_CASE("defaults round-trip through JSON") {
    const auto j = default_config_json();
    const auto rc = run_config_from_json(j);
    CHECK(rc.model == ModelConfig{});
    CHECK(rc.train.batch == 32);
    CHECK(rc.train.lr_patch == 48);
    CHECK(rc.train.base_lr == 1e-4);
    CHECK(rc.train.loss.dr == 10.0);
    CHECK(to_json(rc) == j);
}

TEST_CASE("model presets") {
    CHECK(model_config_from_json({{"preset", "tiny"}, {"scale", 3}}) == tiny_config(3));
    CHECK(model_config_from_json({{"preset", "paper"}, {"scale", 2}}) == paper_config(2));
    auto m = model_config_from_json({{"preset", "tiny"}, {"scale", 2}, {"mnm_mode", "noise_scalar"}});
    CHECK(m.mnm_mode == MnmMode::NoiseScalar);
    CHECK_THROWS_AS(model_config_from_json({{"preset", "huge"}}), std::invalid_argument);
    CHECK(model_config_from_json(model_config_to_json(tiny_config(4))) == tiny_config(4));
}

TEST_CASE("overrides") {
    auto j = default_config_json();
    apply_override(j, "train.batch=7");
    apply_override(j, "train.augment=false");
    apply_override(j, "paths.data_dir=/data/div2k");
    apply_override(j, "degradation.noise_max=50");
    const auto rc = run_config_from_json(j);
    CHECK(rc.train.batch == 7);
    CHECK_FALSE(rc.train.augment);
    CHECK(rc.data_dir == "/data/div2k");
    CHECK(rc.train.degradation.noise_max == 50.0);
    CHECK(rc.train.degradation.scale == rc.model.scale);

    CHECK_THROWS_AS(apply_override(j, "train.batch"), std::invalid_argument);
    auto typo = default_config_json();
    apply_override(typo, "train.bacth=4");
    CHECK_THROWS_WITH_AS(run_config_from_json(typo), doctest::Contains("bacth"), std::invalid_argument);
    auto bad = default_config_json();
    apply_override(bad, "train.batch=0");
    CHECK_THROWS(run_config_from_json(bad));
}

TEST_CASE("config files replace the model section") {
    const auto path = std::filesystem::temp_directory_path() / "dmsr_test_config.json";
    {
        std::ofstream f(path);
        f << "{\n  // small model for quick runs\n  \"model\": {\"preset\": \"tiny\", \"scale\": 2},\n"
             "  \"train\": {\"batch\": 4}\n}\n";
    }
    const auto rc = run_config_from_json(load_config_json(path));
    CHECK(rc.model == tiny_config(2));
    CHECK(rc.train.batch == 4);
    CHECK(rc.train.lr_patch == 48);
    CHECK(rc.train.degradation.kernel_size == 5);
    std::filesystem::remove(path);
    CHECK_THROWS(load_config_json(path));
}
