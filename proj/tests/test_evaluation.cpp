#include <doctest.h>

#include <cmath>
#include <set>

#include <json.hpp>

#include "dmsr/evaluation.hpp"
#include "oracles.hpp"

using namespace dmsr;

namespace {

ImageTensor constant_image(int h, int w, float v) { return ImageTensor(h, w, 3, v); }

}  // namespace

TEST_CASE("luma conversion") {
    CHECK(rgb_to_y(constant_image(2, 2, 1.0f)).at(0, 0, 0) == doctest::Approx(235.0).epsilon(1e-6));
    CHECK(rgb_to_y(constant_image(2, 2, 0.0f)).at(1, 1, 0) == doctest::Approx(16.0));
    const auto img = oracle::random_image(5, 6, 3, 1);
    const auto y = rgb_to_y(img);
    CHECK(y.channels() == 1);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 6; ++c) CHECK(y.at(r, c, 0) == doctest::Approx(oracle::y_of(img, r, c)).epsilon(1e-6));
    CHECK_THROWS_AS(rgb_to_y(ImageTensor(4, 4, 1)), std::invalid_argument);
}

TEST_CASE("PSNR closed form") {
    const auto a = constant_image(16, 16, 0.5f);
    CHECK(std::isinf(psnr_y(a, a, 0)));
    for (double d : {0.01, 0.05, 0.2}) {
        const auto b = constant_image(16, 16, static_cast<float>(0.5 + d));
        const double expect = 20.0 * std::log10(255.0 / (d * 219.0));
        CHECK(psnr_y(a, b, 2) == doctest::Approx(expect).epsilon(1e-4));
    }
}

TEST_CASE("metrics agree with direct implementations") {
    for (int i = 0; i < 20; ++i) {
        const int h = 24 + i % 5, w = 30 - i % 4;
        const auto a = oracle::random_image(h, w, 3, 100 + i);
        auto b = a;
        std::mt19937_64 rng(i);
        std::normal_distribution<float> noise(0.0f, 0.02f + 0.01f * (i % 4));
        for (auto& v : b.data()) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
        const int crop = i % 3;
        CHECK(psnr_y(a, b, crop) == doctest::Approx(oracle::psnr(a, b, crop)).epsilon(1e-6));
        CHECK(std::abs(ssim_y(a, b, crop) - oracle::ssim(a, b, crop)) < 1e-5);
    }
}

TEST_CASE("SSIM properties") {
    const auto a = oracle::random_image(32, 32, 3, 7);
    CHECK(ssim_y(a, a, 0) == doctest::Approx(1.0).epsilon(1e-9));
    auto inv = a;
    for (auto& v : inv.data()) v = 1.0f - v;
    CHECK(ssim_y(a, inv, 0) < 0.5);
    CHECK_THROWS_AS(ssim_y(a, a, 11), std::invalid_argument);
    CHECK_THROWS_AS(psnr_y(a, oracle::random_image(32, 31, 3, 1), 0), std::invalid_argument);
}

TEST_CASE("metrics fall as noise grows") {
    const auto hr = synthetic_image(48, 48, 3);
    double last_psnr = 1e9, last_ssim = 2.0;
    for (double sigma : {5.0, 15.0, 30.0, 60.0}) {
        const auto noisy = add_awgn(hr, sigma, 42).first;
        const double p = psnr_y(hr, noisy, 4), s = ssim_y(hr, noisy, 4);
        CHECK(p < last_psnr);
        CHECK(s < last_ssim);
        last_psnr = p;
        last_ssim = s;
    }
}

TEST_CASE("benchmark grid") {
    Dataset d = synthetic_dataset(2, 37, 41, 9, "toy");
    BenchmarkGrid grid;
    grid.seed = 3;
    const auto report = run_benchmark(bicubic_model(), {d}, grid, "bicubic");
    REQUIRE(report.rows.size() == 18);
    std::set<std::tuple<int, double, double>> cells;
    for (const auto& c : report.rows) {
        cells.insert({c.scale, c.kernel_width, c.noise_level});
        CHECK(c.images == 2);
        CHECK(c.failures == 0);
        CHECK(c.psnr == doctest::Approx(c.bicubic_psnr));
        CHECK(std::isfinite(c.psnr));
        CHECK(c.ssim > 0.0);
        CHECK(c.ssim <= 1.0);
    }
    CHECK(cells.size() == 18);
    const auto* lo = report.find("toy", 2, 1.3, 15.0);
    const auto* hi = report.find("toy", 2, 1.3, 50.0);
    REQUIRE(lo);
    REQUIRE(hi);
    CHECK(hi->psnr < lo->psnr);
    CHECK(report.find("toy", 5, 1.3, 15.0) == nullptr);

    const auto again = run_benchmark(bicubic_model(), {d}, grid, "bicubic");
    for (std::size_t i = 0; i < report.rows.size(); ++i) CHECK(report.rows[i].psnr == again.rows[i].psnr);

    const auto csv = report_csv(report);
    CHECK(csv.rfind("# model=bicubic crop=scale", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 20);
    const auto md = report_markdown(report);
    CHECK(md.find("Bicubic") != std::string::npos);
    CHECK(md.find("toy") != std::string::npos);

    // Failing images are counted, not fatal.
    SrModel broken = [](const ImageTensor& lr, int s) {
        if (lr.width() * s > 36) throw std::runtime_error("boom");
        return bicubic_upsample(lr, s);
    };
    const auto partial = run_benchmark(broken, {d}, grid, "broken");
    for (const auto& c : partial.rows) CHECK(c.failures == 2);
}

TEST_CASE("evaluation seeds are cell-specific and stable") {
    const auto s = eval_seed(0, "Set5", 4, 1.3, 15.0, 2);
    CHECK(s == eval_seed(0, "Set5", 4, 1.3, 15.0, 2));
    CHECK(s != eval_seed(0, "Set5", 4, 1.3, 15.0, 3));
    CHECK(s != eval_seed(0, "Set14", 4, 1.3, 15.0, 2));
    CHECK(s != eval_seed(0, "Set5", 3, 1.3, 15.0, 2));
    CHECK(s != eval_seed(1, "Set5", 4, 1.3, 15.0, 2));
}

TEST_CASE("degradation window") {
    const auto img = synthetic_image(50, 62, 4);
    const auto win = degradation_window(img, 2, 7);
    REQUIRE(win.tiles.size() == 24);
    CHECK(win.mosaic.height() == 6 * 25 + 5 * 2);
    CHECK(win.mosaic.width() == 4 * 31 + 3 * 2);
    std::set<std::pair<double, double>> pairs;
    for (const auto& t : win.tiles) {
        pairs.insert({t.noise_level, t.kernel_width});
        CHECK(t.lr.height() == 25);
        CHECK(t.lr.at(3, 4, 1) == win.mosaic.at(t.y0 + 3, t.x0 + 4, 1));
    }
    CHECK(pairs.size() == 24);
    CHECK(win.tiles.front().noise_level == 0.0);
    CHECK(win.tiles.back().noise_level == 75.0);
    CHECK(win.tiles.back().kernel_width == 3.0);
    CHECK(win.mosaic.at(25, 0, 0) == 1.0f);
    // Same seed, same mosaic.
    CHECK(oracle::max_abs_diff(degradation_window(img, 2, 7).mosaic, win.mosaic) == 0.0);

    const auto manifest = nlohmann::json::parse(window_manifest_json(win, 2));
    CHECK(manifest["tiles"].size() == 24);
    CHECK(manifest["tiles"][5]["label"].get<std::string>().find("sigma_n=15") != std::string::npos);
}
