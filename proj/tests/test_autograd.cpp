#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "dmsr/autograd.hpp"
#include "dmsr/degradation.hpp"
#include "oracles.hpp"

using namespace dmsr;
using ag::Tape;
using ag::Tensor;
using ag::Var;

namespace {

Tensor<double> random_tensor(int c, int h, int w, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(c, h, w);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.v) v = u(rng);
    return t;
}

using OpFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Max relative error between analytic and central-difference gradients of mse(op(inputs), target)
// over every input entry and every parameter entry. Gradients below 1e-4 are compared absolutely.
double op_grad_error(const OpFn& op, std::vector<Tensor<double>> inputs, ag::ParameterSet<double>* params,
                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor<double> target;
    auto loss = [&](Tape<double>& tape, std::vector<Var<double>>& leaves) {
        leaves.clear();
        for (auto& in : inputs) leaves.push_back(tape.leaf(in));
        auto out = op(tape, leaves);
        if (target.v.empty()) target = random_tensor(out->value.c, out->value.h, out->value.w, rng);
        return ag::mse_mean(tape, out, tape.constant(target));
    };
    auto value = [&]() {
        Tape<double> tape(params, false, false);
        std::vector<Var<double>> leaves;
        return loss(tape, leaves)->value.v[0];
    };

    Tape<double> tape(params);
    std::vector<Var<double>> leaves;
    tape.backward(loss(tape, leaves));

    const double h = 1e-6;
    double worst = 0.0;
    auto compare = [&](double analytic, double& slot) {
        const double orig = slot;
        slot = orig + h;
        const double up = value();
        slot = orig - h;
        const double down = value();
        slot = orig;
        const double numeric = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4}));
    };
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& g = leaves[i]->grad;
        for (std::size_t k = 0; k < inputs[i].v.size(); ++k) compare(g.v.empty() ? 0.0 : g.v[k], inputs[i].v[k]);
    }
    if (params)
        for (std::size_t a = 0; a < params->size(); ++a)
            for (std::size_t k = 0; k < (*params)[static_cast<int>(a)].data.size(); ++k)
                compare(tape.grads()[a][k], (*params)[static_cast<int>(a)].data[k]);
    return worst;
}

}  // namespace

TEST_CASE("elementwise and reduction ops have correct gradients") {
    std::mt19937_64 rng(1);
    const auto a = random_tensor(3, 4, 5, rng), b = random_tensor(3, 4, 5, rng);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::add(t, x[0], x[1]); }, {a, b}, nullptr, 1) < 1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::sub(t, x[0], x[1]); }, {a, b}, nullptr, 2) < 1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::scale(t, x[0], 0.7); }, {a}, nullptr, 3) < 1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::relu(t, x[0]); }, {a}, nullptr, 4) < 1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::sigmoid(t, x[0]); }, {a}, nullptr, 5) < 1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::softmax(t, x[0]); }, {a}, nullptr, 6) < 1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::global_avg_pool(t, x[0]); }, {a}, nullptr, 7) < 1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::rms(t, x[0]); }, {a}, nullptr, 8) < 1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::l1_mean(t, x[0], x[1]); }, {a, b}, nullptr, 9) < 1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::concat_channels(t, x[0], x[1]); }, {a, b}, nullptr, 10) <
          1e-5);
    CHECK(op_grad_error([](auto& t, const auto& x) { return ag::reshape(t, x[0], 5, 4, 3); }, {a}, nullptr, 11) < 1e-5);
    CHECK(op_grad_error(
              [](auto& t, const auto& x) {
                  return ag::weighted_sum<double>(t, {{ag::mse_mean(t, x[0], x[1]), 2.0}, {ag::l1_mean(t, x[0], x[1]), 0.5}});
              },
              {a, b}, nullptr, 12) < 1e-5);
}

TEST_CASE("shape ops have correct gradients") {
    std::mt19937_64 rng(2);
    const auto gate = random_tensor(3, 1, 1, rng);
    const auto x = random_tensor(3, 4, 4, rng);
    CHECK(op_grad_error([](auto& t, const auto& v) { return ag::scale_channels(t, v[0], v[1]); }, {x, gate}, nullptr, 1) <
          1e-5);
    CHECK(op_grad_error([](auto& t, const auto& v) { return ag::repeat_spatial(t, v[0], 3, 5); }, {gate}, nullptr, 2) < 1e-5);
    const auto s = random_tensor(1, 1, 1, rng);
    CHECK(op_grad_error([](auto& t, const auto& v) { return ag::broadcast_scalar(t, v[0], 2, 3, 3); }, {s}, nullptr, 3) <
          1e-5);
    const auto ps = random_tensor(8, 3, 2, rng);
    CHECK(op_grad_error([](auto& t, const auto& v) { return ag::pixel_shuffle(t, v[0], 2); }, {ps}, nullptr, 4) < 1e-5);
}

TEST_CASE("pixel_shuffle ordering") {
    Tensor<float> x(4, 1, 1);
    for (int c = 0; c < 4; ++c) x.v[c] = static_cast<float>(c);
    Tape<float> tape;
    const auto y = ag::pixel_shuffle(tape, tape.constant(x), 2)->value;
    REQUIRE(y.c == 1);
    CHECK(y.at(0, 0, 0) == 0.0f);
    CHECK(y.at(0, 0, 1) == 1.0f);
    CHECK(y.at(0, 1, 0) == 2.0f);
    CHECK(y.at(0, 1, 1) == 3.0f);
}

TEST_CASE("parameterized ops have correct gradients") {
    std::mt19937_64 rng(3);
    ag::ParameterSet<double> p;
    const int w = p.add("conv.weight", {4, 3, 3, 3}, "test");
    const int b = p.add("conv.bias", {4}, "test");
    const int lw = p.add("fc.weight", {5, 12}, "test");
    for (auto& arr : p)
        for (auto& v : arr.data) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    const auto x = random_tensor(3, 5, 6, rng);
    CHECK(op_grad_error([&](auto& t, const auto& v) { return ag::conv2d(t, v[0], w, b, 1); }, {x}, &p, 1) < 1e-5);
    CHECK(op_grad_error([&](auto& t, const auto& v) { return ag::conv2d(t, v[0], w, -1, 0); }, {x}, &p, 2) < 1e-5);
    const auto flat = random_tensor(12, 1, 1, rng);
    CHECK(op_grad_error([&](auto& t, const auto& v) { return ag::linear(t, v[0], lw, -1); }, {flat}, &p, 3) < 1e-5);
}

TEST_CASE("conv2d matches a direct loop") {
    std::mt19937_64 rng(4);
    ag::ParameterSet<double> p;
    const int w = p.add("w", {2, 3, 3, 3}, "test");
    const int b = p.add("b", {2}, "test");
    for (auto& arr : p)
        for (auto& v : arr.data) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto x = random_tensor(3, 6, 7, rng);
    Tape<double> tape(&p, false, false);
    const auto y = ag::conv2d(tape, tape.constant(x), w, b, 1)->value;
    double worst = 0.0;
    for (int o = 0; o < 2; ++o)
        for (int yy = 0; yy < 6; ++yy)
            for (int xx = 0; xx < 7; ++xx) {
                double s = p[b].data[o];
                for (int c = 0; c < 3; ++c)
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            const int sy = yy + i - 1, sx = xx + j - 1;
                            if (sy < 0 || sy >= 6 || sx < 0 || sx >= 7) continue;
                            s += p[w].data[((o * 3 + c) * 3 + i) * 3 + j] * x.at(c, sy, sx);
                        }
                worst = std::max(worst, std::abs(s - y.at(o, yy, xx)));
            }
    CHECK(worst < 1e-12);
}

TEST_CASE("image-domain ops have correct gradients") {
    std::mt19937_64 rng(5);
    const auto img = random_tensor(3, 6, 6, rng);
    const auto field = random_tensor(9, 6, 6, rng);
    CHECK(op_grad_error([](auto& t, const auto& v) { return ag::dynamic_conv(t, v[0], v[1], 3); }, {img, field}, nullptr, 1) <
          1e-5);
    const auto k = random_tensor(1, 3, 3, rng, 0.0, 1.0);
    CHECK(op_grad_error([](auto& t, const auto& v) { return ag::blur_reflect(t, v[0], v[1]); }, {img, k}, nullptr, 2) < 1e-5);
    const auto ty = detail::cubic_axis_taps(6, 3), tx = detail::cubic_axis_taps(6, 2);
    CHECK(op_grad_error([&](auto& t, const auto& v) { return ag::resample(t, v[0], ty, tx); }, {img}, nullptr, 3) < 1e-5);
}

TEST_CASE("dynamic_conv matches the naive oracle") {
    std::mt19937_64 rng(6);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const int h = std::uniform_int_distribution<int>(1, 16)(rng);
        const int w = std::uniform_int_distribution<int>(1, 16)(rng);
        const int k = 2 * std::uniform_int_distribution<int>(0, 7)(rng) + 1;
        const auto img = oracle::random_image(h, w, 3, rng());
        std::vector<double> field(static_cast<std::size_t>(k) * k * h * w);
        for (auto& v : field) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        Tensor<float> wf(k * k, h, w);
        for (std::size_t i = 0; i < field.size(); ++i) {
            wf.v[i] = static_cast<float>(field[i]);
            field[i] = wf.v[i];
        }
        Tape<float> tape;
        const auto out = ag::to_image(ag::dynamic_conv(tape, tape.constant(ag::to_tensor<float>(img)), tape.constant(wf), k)->value);
        worst = std::max(worst, oracle::max_abs_diff(out, oracle::dynamic_conv(img, field, k)));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("dynamic_conv special fields") {
    const auto img = oracle::random_image(12, 10, 3, 9);
    const int k = 15, h = 12, w = 10;
    Tape<float> tape;
    const auto x = tape.constant(ag::to_tensor<float>(img));

    Tensor<float> delta(k * k, h, w, 0.0f);
    std::fill(delta.plane(k * k / 2), delta.plane(k * k / 2) + delta.plane_size(), 1.0f);
    CHECK(ag::to_image(ag::dynamic_conv(tape, x, tape.constant(delta), k)->value) == img);

    Tensor<float> box(k * k, h, w, 1.0f / 225.0f);
    std::vector<double> box_d(box.v.begin(), box.v.end());
    const auto out = ag::to_image(ag::dynamic_conv(tape, x, tape.constant(box), k)->value);
    CHECK(oracle::max_abs_diff(out, oracle::dynamic_conv(img, box_d, k)) < 1e-6);

    // Linear in the image.
    const auto y = oracle::random_image(12, 10, 3, 10);
    ImageTensor mix(h, w, 3);
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = 0.5f * img.data()[i] - 2.0f * y.data()[i];
    std::mt19937_64 rng(1);
    Tensor<float> field(k * k, h, w);
    for (auto& v : field.v) v = std::uniform_real_distribution<float>(-0.1f, 0.1f)(rng);
    const auto f = tape.constant(field);
    const auto a = ag::dynamic_conv(tape, x, f, k)->value;
    const auto b = ag::dynamic_conv(tape, tape.constant(ag::to_tensor<float>(y)), f, k)->value;
    const auto m = ag::dynamic_conv(tape, tape.constant(ag::to_tensor<float>(mix)), f, k)->value;
    double worst = 0.0;
    for (std::size_t i = 0; i < m.v.size(); ++i) worst = std::max(worst, std::abs(double(m.v[i]) - (0.5 * a.v[i] - 2.0 * b.v[i])));
    CHECK(worst < 1e-5);

    Tensor<float> wrong(k * k, h + 1, w);
    CHECK_THROWS_AS(ag::dynamic_conv(tape, x, tape.constant(wrong), k), std::invalid_argument);
}

TEST_CASE("blur_reflect and resample agree with the image pipeline") {
    const auto img = oracle::random_image(20, 16, 3, 12);
    const auto k = gaussian_kernel(1.1, 5);
    Tensor<float> kt(1, 5, 5);
    for (int i = 0; i < 25; ++i) kt.v[i] = static_cast<float>(k.weights[i]);
    Tape<float> tape;
    const auto blurred = ag::blur_reflect(tape, tape.constant(ag::to_tensor<float>(img)), tape.constant(kt));
    CHECK(ag::to_image(blurred->value) == blur(img, k));
    const auto down = ag::resample(tape, blurred, detail::cubic_axis_taps(20, 10), detail::cubic_axis_taps(16, 8));
    CHECK(ag::to_image(down->value) == bicubic_downsample(blur(img, k), 2));
}

TEST_CASE("tapes without recording keep no graph") {
    ag::ParameterSet<float> p;
    p.add("w", {1, 1, 1, 1}, "test");
    Tape<float> tape(&p, true, false);
    CHECK_FALSE(tape.recording());
    CHECK_FALSE(tape.param_grads_enabled());
    CHECK(p.scalar_count() == 1);
}
