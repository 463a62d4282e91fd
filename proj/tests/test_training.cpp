#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dmsr/training.hpp"
#include "oracles.hpp"

using namespace dmsr;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
    TrainConfig c;
    c.batch = 2;
    c.lr_patch = 8;
    c.total_iters = 20;
    c.base_lr = 1e-3;
    c.halve_every = 1000;
    c.log_every = 5;
    c.checkpoint_every = 10;
    c.degradation.scale = 2;
    c.degradation.kernel_size = 5;
    c.seed = 11;
    return c;
}

const Network<float>& base_net() {
    static const auto net = make_network<float>(tiny_config(2), 21);
    return net;
}

const Dataset& small_data() {
    static const auto d = synthetic_dataset(4, 24, 24, 5);
    return d;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("dmsr_training_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool same_params(const Network<float>& a, const Network<float>& b) {
    if (a.params.size() != b.params.size()) return false;
    for (std::size_t i = 0; i < a.params.size(); ++i)
        if (a.params[static_cast<int>(i)].data != b.params[static_cast<int>(i)].data) return false;
    return true;
}

}  // namespace

TEST_CASE("step schedule halves every interval") {
    TrainConfig c;
    CHECK(lr_schedule(0, c) == 1e-4);
    CHECK(lr_schedule(199999, c) == 1e-4);
    CHECK(lr_schedule(200000, c) == 5e-5);
    CHECK(lr_schedule(400000, c) == 2.5e-5);
    CHECK(lr_schedule(499999, c) == 2.5e-5);
}

TEST_CASE("config validation") {
    CHECK_NOTHROW(TrainConfig{}.validate());
    auto c = small_config();
    c.batch = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config();
    c.degradation.noise_min = 30;
    c.degradation.noise_max = 10;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    auto state = init_train_state(base_net(), 1);
    const auto cfg = small_config();
    const auto batch = sample_batch(small_data(), cfg, 2, state.rng);
    const auto loss = train_step(state, batch, cfg, 0.0);
    CHECK(std::isfinite(loss.total));
    CHECK(state.iteration == 1);
    CHECK(same_params(state.net, base_net()));
}

TEST_CASE("loss decreases on a frozen batch") {
    auto state = init_train_state(base_net(), 2);
    auto cfg = small_config();
    cfg.batch = 4;
    const auto batch = sample_batch(small_data(), cfg, 2, state.rng);
    const double first = train_step(state, batch, cfg).total;
    double last = first;
    for (int i = 0; i < 49; ++i) last = train_step(state, batch, cfg).total;
    MESSAGE("frozen batch loss " << first << " -> " << last);
    CHECK(last < 0.7 * first);
}

TEST_CASE("every learnable array moves after one step") {
    // With two hidden units a channel-attention ReLU can start dead; keep it alive so that every
    // array has a gradient path.
    auto net = base_net();
    for (auto& a : net.params)
        if (a.name.find("ca_down.bias") != std::string::npos) std::fill(a.data.begin(), a.data.end(), 0.1f);
    auto state = init_train_state(net, 3);
    const auto cfg = small_config();
    const auto batch = sample_batch(small_data(), cfg, 2, state.rng);
    train_step(state, batch, cfg);
    for (std::size_t i = 0; i < state.net.params.size(); ++i) {
        const auto& now = state.net.params[static_cast<int>(i)];
        INFO(now.name);
        CHECK(now.data != net.params[static_cast<int>(i)].data);
    }
}

TEST_CASE("warmup updates only the extractor") {
    auto state = init_train_state(base_net(), 4);
    auto cfg = small_config();
    cfg.warmup_iters = 1;
    const auto batch = sample_batch(small_data(), cfg, 2, state.rng);
    train_step(state, batch, cfg);
    for (std::size_t i = 0; i < state.net.params.size(); ++i) {
        const auto& now = state.net.params[static_cast<int>(i)];
        const bool moved = now.data != base_net().params[static_cast<int>(i)].data;
        INFO(now.name);
        CHECK(moved == (now.name.rfind("extractor.", 0) == 0));
    }
}

TEST_CASE("batch sampling") {
    auto cfg = small_config();
    cfg.batch = 64;
    std::mt19937_64 rng(9);

    SUBCASE("dihedral variants are uniform") {
        std::vector<int> counts(8, 0);
        for (int i = 0; i < 50; ++i)
            for (const auto& item : sample_batch(small_data(), cfg, 2, rng)) ++counts[item.augmentation];
        for (int c : counts) CHECK(std::abs(c - 400) < 80);
    }
    SUBCASE("augmentation off") {
        cfg.augment = false;
        for (const auto& item : sample_batch(small_data(), cfg, 2, rng)) CHECK(item.augmentation == 0);
    }
    SUBCASE("shapes and degradation ranges") {
        cfg.degradation.kernel_width_min = 0.5;
        cfg.degradation.kernel_width_max = 1.5;
        cfg.degradation.noise_min = 5;
        cfg.degradation.noise_max = 10;
        for (const auto& item : sample_batch(small_data(), cfg, 2, rng)) {
            CHECK(item.hr.height() == 16);
            CHECK(item.sample.lr.height() == 8);
            CHECK(item.sample.lr.width() == 8);
            CHECK(item.sample.kernel_gt.size == 5);
            CHECK(item.sample.spec.kernel_width >= 0.5);
            CHECK(item.sample.spec.kernel_width <= 1.5);
            CHECK(item.sample.spec.noise_level >= 5);
            CHECK(item.sample.spec.noise_level <= 10);
        }
    }
    SUBCASE("images smaller than the patch are skipped") {
        Dataset d;
        d.name = "mixed";
        d.images = {synthetic_image(10, 10, 1), synthetic_image(20, 20, 2)};
        for (const auto& item : sample_batch(d, cfg, 2, rng)) CHECK(item.image_index == 1);
        d.images.pop_back();
        CHECK_THROWS(sample_batch(d, cfg, 2, rng));
    }
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto cfg = small_config();
    cfg.total_iters = 200;
    cfg.log_every = 50;
    auto a = init_train_state(base_net(), 77);
    auto b = init_train_state(base_net(), 77);
    const auto la = train(a, small_data(), cfg);
    const auto lb = train(b, small_data(), cfg);
    REQUIRE(la.size() == 4);
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(loss_csv_row(la[i]) == loss_csv_row(lb[i]));
    CHECK(same_params(a.net, b.net));
    CHECK(la.back().loss.total < la.front().loss.total);
}

TEST_CASE("checkpoints round-trip and resume exactly") {
    const auto dir = scratch("ckpt");
    const auto cfg = small_config();

    auto straight = init_train_state(base_net(), 5);
    train(straight, small_data(), cfg);

    auto first = init_train_state(base_net(), 5);
    auto half = cfg;
    half.total_iters = 10;
    TrainHooks hooks;
    hooks.checkpoint_dir = dir;
    hooks.log_csv = dir / "loss_log.csv";
    train(first, small_data(), half, hooks);
    REQUIRE(fs::exists(dir / "checkpoint_10.ckpt"));
    REQUIRE(fs::exists(dir / "latest.ckpt"));

    auto resumed = load_checkpoint(dir / "latest.ckpt", tiny_config(2));
    CHECK(resumed.iteration == 10);
    CHECK(same_params(resumed.net, first.net));
    CHECK(resumed.adam_m == first.adam_m);
    CHECK(resumed.adam_v == first.adam_v);
    CHECK(resumed.rng == first.rng);
    CHECK(resumed.net.pca_hash == first.net.pca_hash);
    train(resumed, small_data(), cfg, hooks);
    CHECK(resumed.iteration == 20);
    CHECK(same_params(resumed.net, straight.net));

    std::ifstream csv(dir / "loss_log.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "iteration,re,dr,dc_lr,dc_noise,dc_kernel,total,lr");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 4);

    try {
        load_checkpoint(dir / "latest.ckpt", tiny_config(3));
        FAIL("expected a layout mismatch");
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        CHECK(what.find("sr_network.up") != std::string::npos);
    }

    auto bytes = read_file(dir / "latest.ckpt");
    bytes[8] = 7;
    write_file(dir / "bad.ckpt", bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.ckpt"), doctest::Contains("version"), std::runtime_error);
    write_file(dir / "short.ckpt", read_file(dir / "latest.ckpt").substr(0, 2000));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("non-finite loss stops training and names the checkpoint") {
    auto state = init_train_state(base_net(), 6);
    state.last_checkpoint = "run/checkpoint_40.ckpt";
    state.net.params["sr_network.tail.bias"].data[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train(state, small_data(), small_config()), doctest::Contains("checkpoint_40"), TrainingError);
}

TEST_CASE("noise-free fine-tuning") {
    auto cfg = small_config();
    cfg.finetune_iters = 6;
    cfg.finetune_lr = 3e-5;
    cfg.log_every = 3;
    cfg.warmup_iters = 100;
    const auto nf = noise_free_config(cfg);
    CHECK(nf.degradation.noise_min == 0.0);
    CHECK(nf.degradation.noise_max == 0.0);
    CHECK(nf.warmup_iters == 0);

    std::mt19937_64 rng(1);
    for (const auto& item : sample_batch(small_data(), nf, 2, rng)) {
        CHECK(item.sample.spec.noise_level == 0.0);
        for (float v : item.sample.noise_map_gt.data()) CHECK(v == 0.0f);
    }

    auto state = init_train_state(base_net(), 8);
    state.iteration = 42;
    const auto rows = finetune_noise_free(state, small_data(), cfg);
    CHECK(state.iteration == 48);
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) CHECK(r.rate == 3e-5);
    CHECK_FALSE(same_params(state.net, base_net()));
}
