#include <doctest.h>

#include <cmath>
#include <limits>

#include "dmsr/losses.hpp"
#include "oracles.hpp"

using namespace dmsr;

namespace {

double mse_loop(const ImageTensor& a, const ImageTensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (double(a.data()[i]) - b.data()[i]) * (double(a.data()[i]) - b.data()[i]);
    return s / a.size();
}

double mse_loop(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / a.size();
}

}  // namespace

TEST_CASE("reconstruction loss") {
    auto hr = oracle::random_image(10, 12, 3, 1);
    for (auto& v : hr.data()) v *= 0.8f;
    CHECK(reconstruction_loss(hr, hr) == 0.0);
    auto shifted = hr;
    for (auto& v : shifted.data()) v += 0.1f;
    CHECK(reconstruction_loss(shifted, hr) == doctest::Approx(0.1).epsilon(1e-6));

    const auto a = oracle::random_image(9, 7, 3, 2), b = oracle::random_image(9, 7, 3, 3);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a.data()[i]) - b.data()[i]);
    CHECK(std::abs(reconstruction_loss(a, b) - s / a.size()) < 1e-7);
    CHECK_THROWS_AS(reconstruction_loss(a, oracle::random_image(9, 8, 3, 1)), std::invalid_argument);
}

TEST_CASE("degradation reconstruction loss") {
    const auto n = oracle::random_image(8, 8, 3, 4);
    const auto k = gaussian_kernel(1.2);
    CHECK(degradation_reconstruction_loss(n, k, n, k) == 0.0);

    auto k2 = k;
    k2.weights[30] += 0.01;
    CHECK(degradation_reconstruction_loss(n, k2, n, k) == doctest::Approx(0.01 * 0.01 / 225.0).epsilon(1e-9));

    const auto m = oracle::random_image(8, 8, 3, 5);
    const auto k3 = gaussian_kernel(2.2);
    const double expect = mse_loop(n, m) + mse_loop(k.weights, k3.weights);
    CHECK(std::abs(degradation_reconstruction_loss(n, k, m, k3) - expect) < 1e-7);
    CHECK_THROWS_AS(degradation_reconstruction_loss(n, k, oracle::random_image(8, 9, 3, 1), k), std::invalid_argument);
}

TEST_CASE("consistency loss is exactly zero at perfect estimates") {
    const auto net = make_network<float>(tiny_config(2), 3);
    const auto hr = oracle::random_image(32, 32, 3, 6);
    for (double noise : {0.0, 15.0, 50.0}) {
        const auto s = degrade(hr, DegradationSpec{1.3, noise, 2, 99, 5});
        const auto t = degradation_consistency_loss(net, hr, s.lr_preclamp, s.kernel_gt, s.noise_map_gt, 2);
        CHECK(t.dc_lr == 0.0);
        CHECK(t.dc_noise == 0.0);
        CHECK(t.dc_kernel == 0.0);
    }
}

TEST_CASE("consistency loss with a constant extractor") {
    auto net = make_network<float>(tiny_config(2), 4);
    for (auto& a : net.params)
        if (a.name.rfind("extractor.", 0) == 0) std::fill(a.data.begin(), a.data.end(), 0.0f);
    const auto hr = oracle::random_image(24, 24, 3, 7);
    const auto lr = oracle::random_image(12, 12, 3, 8);
    const auto t = degradation_consistency_loss(net, hr, lr, gaussian_kernel(2.0, 5), oracle::random_image(12, 12, 3, 9), 2);
    CHECK(t.dc_lr > 0.0);
    CHECK(t.dc_noise == 0.0);
    CHECK(t.dc_kernel == 0.0);
}

TEST_CASE("consistency loss matches a forward-only recomputation") {
    const auto net = make_network<float>(tiny_config(2), 5);
    const auto hr = oracle::random_image(20, 16, 3, 10);
    const auto lr = oracle::random_image(10, 8, 3, 11);
    auto n_est = oracle::random_image(10, 8, 3, 12);
    for (auto& v : n_est.data()) v = (v - 0.5f) * 0.1f;
    const auto k_est = gaussian_kernel(0.8, 5);
    const auto t = degradation_consistency_loss(net, hr, lr, k_est, n_est, 2);

    auto sim = oracle::resize(oracle::blur(hr, k_est.weights, 5), 10, 8);
    for (std::size_t i = 0; i < sim.size(); ++i) sim.data()[i] += n_est.data()[i];
    CHECK(std::abs(t.dc_lr - mse_loop(sim, lr)) < 1e-6);
    const auto e_sim = extract(net, sim), e_lr = extract(net, lr);
    CHECK(std::abs(t.dc_noise - mse_loop(e_sim.noise_map_est, e_lr.noise_map_est)) < 1e-6);
    CHECK(std::abs(t.dc_kernel - mse_loop(e_sim.kernel_est.weights, e_lr.kernel_est.weights)) < 1e-6);
}

TEST_CASE("consistency LR term is differentiable in the kernel") {
    using ag::Tape;
    std::mt19937_64 rng(3);
    const auto hr = ag::to_tensor<double>(oracle::random_image(12, 12, 3, 13));
    const auto lr = ag::to_tensor<double>(oracle::random_image(6, 6, 3, 14));
    const auto noise = ag::to_tensor<double>(oracle::random_image(6, 6, 3, 15));
    ag::Tensor<double> k(1, 5, 5);
    for (auto& v : k.v) v = std::uniform_real_distribution<double>(0.0, 0.1)(rng);
    const auto ty = detail::cubic_axis_taps(12, 6), tx = detail::cubic_axis_taps(12, 6);
    auto dc_lr = [&](Tape<double>& tape, const ag::Var<double>& kv) {
        auto sim = ag::add(tape, ag::resample(tape, ag::blur_reflect(tape, tape.constant(hr), kv), ty, tx), tape.constant(noise));
        return ag::mse_mean(tape, sim, tape.constant(lr));
    };
    Tape<double> tape;
    const auto kv = tape.leaf(k);
    tape.backward(dc_lr(tape, kv));
    double worst = 0.0;
    for (std::size_t i = 0; i < k.v.size(); ++i) {
        auto kp = k, km = k;
        kp.v[i] += 1e-6;
        km.v[i] -= 1e-6;
        Tape<double> t1, t2;
        const double num = (dc_lr(t1, t1.constant(kp))->value.v[0] - dc_lr(t2, t2.constant(km))->value.v[0]) / 2e-6;
        const double ana = kv->grad.v[i];
        worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}));
    }
    CHECK(worst <= 1e-3);
}

TEST_CASE("overall loss arithmetic") {
    LossBreakdown p{0.2, 0.01, 0.03, 0.01, 0.01, 0.0};
    CHECK(overall_loss(p, LossWeights{}) == doctest::Approx(0.35).epsilon(1e-12));
    CHECK(p.total == doctest::Approx(0.35).epsilon(1e-12));
    LossWeights no_aux;
    no_aux.dr = 0.0;
    no_aux.dc = 0.0;
    CHECK(overall_loss(p, no_aux) == doctest::Approx(0.2));
    LossBreakdown zero;
    CHECK(overall_loss(zero, LossWeights{}) == 0.0);

    LossBreakdown bad = p;
    bad.dc_kernel = std::numeric_limits<double>::quiet_NaN();
    try {
        overall_loss(bad, LossWeights{});
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        CHECK(e.term() == "dc_kernel");
    }
    LossWeights negative;
    negative.dr = -1.0;
    CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
}

TEST_CASE("sample loss breakdown and ablation toggles") {
    const auto cfg = tiny_config(2);
    const auto net = make_network<float>(cfg, 6);
    const auto hr = oracle::random_image(24, 24, 3, 16);
    const auto s = degrade(hr, DegradationSpec{1.5, 20.0, 2, 5, cfg.blur_kernel_size});
    TrainingTargets t{&hr, &s.lr, &s.lr_preclamp, &s.kernel_gt, &s.noise_map_gt};

    auto run = [&](const LossWeights& w) {
        ag::Tape<float> tape(&net.params, false, false);
        return sample_loss(tape, cfg, t, w);
    };
    LossWeights full;
    const auto all = run(full);
    const auto& p = all.parts;
    CHECK(p.re > 0.0);
    CHECK(p.dr > 0.0);
    CHECK(p.dc_lr > 0.0);
    CHECK(p.dc_noise > 0.0);
    CHECK(p.dc_kernel > 0.0);
    CHECK(std::abs(p.total - (p.re + 10 * p.dr + p.dc_lr + p.dc_kernel + p.dc_noise)) < 1e-6);
    CHECK(std::abs(all.total->value.v[0] - p.total) < 1e-6);

    // Table 2 rows: {none}, {DR}, {DR, DC(LR)}, {DR, DC(LR), DC(KN)}.
    LossWeights none = full;
    none.dr = 0.0;
    none.dc = 0.0;
    CHECK(std::abs(run(none).total->value.v[0] - p.re) < 1e-6);
    LossWeights dr_only = full;
    dr_only.dc = 0.0;
    CHECK(std::abs(run(dr_only).total->value.v[0] - (p.re + 10 * p.dr)) < 1e-6);
    LossWeights dr_lr = full;
    dr_lr.dc_kernel = false;
    dr_lr.dc_noise = false;
    const auto row3 = run(dr_lr);
    CHECK(row3.parts.dc_kernel == 0.0);
    CHECK(row3.parts.dc_noise == 0.0);
    CHECK(std::abs(row3.total->value.v[0] - (p.re + 10 * p.dr + p.dc_lr)) < 1e-6);

    LossWeights sg = full;
    sg.stop_grad_targets = true;
    CHECK(run(sg).parts.total == doctest::Approx(p.total).epsilon(1e-12));
}

TEST_CASE("stop-gradient changes only the gradient") {
    const auto cfg = tiny_config(2);
    const auto net = make_network<float>(cfg, 7);
    const auto hr = oracle::random_image(16, 16, 3, 17);
    const auto s = degrade(hr, DegradationSpec{1.0, 10.0, 2, 1, cfg.blur_kernel_size});
    TrainingTargets t{&hr, &s.lr, &s.lr_preclamp, &s.kernel_gt, &s.noise_map_gt};
    auto grad_of_head = [&](bool stop) {
        LossWeights w;
        w.stop_grad_targets = stop;
        ag::Tape<float> tape(&net.params);
        tape.backward(sample_loss(tape, cfg, t, w).total);
        return tape.grad_of(net.params.id("extractor.head.weight"));
    };
    CHECK_FALSE(grad_of_head(false) == grad_of_head(true));
}
