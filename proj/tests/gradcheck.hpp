#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dmsr/dataset.hpp"
#include "dmsr/losses.hpp"
#include "dmsr/model.hpp"

namespace gradcheck {

struct Result {
    int sampled = 0;
    int passed = 0;
    double worst = 0.0;
    std::string worst_name;
    std::map<std::string, int> failures;  // component -> count

    double pass_rate() const { return sampled ? static_cast<double>(passed) / sampled : 0.0; }
};

// Five-point central differences of the full training objective on the tiny configuration in double precision.
// A sample passes when |analytic - numeric| / max(|analytic|, |numeric|, floor) <= tol.
inline Result total_loss(std::uint64_t seed, int per_array, double tol = 1e-3, const dmsr::LossWeights& weights = {},
                         double h = 1e-5, double floor = 1e-8) {
    using namespace dmsr;
    ModelConfig cfg = tiny_config(2);
    auto net = make_network<float>(cfg, seed).cast<double>();

    const ImageTensor hr = synthetic_image(32, 32, seed + 1);  // LR patch 16 x 16
    const auto sample = degrade(hr, DegradationSpec{1.3, 15.0, 2, seed + 2, cfg.blur_kernel_size});
    TrainingTargets t{&hr, &sample.lr, &sample.lr_preclamp, &sample.kernel_gt, &sample.noise_map_gt};

    auto loss_at = [&]() {
        ag::Tape<double> tape(&net.params, false, false);
        return sample_loss(tape, cfg, t, weights).total->value.v[0];
    };

    ag::Tape<double> tape(&net.params);
    const auto analytic_loss = sample_loss(tape, cfg, t, weights);
    tape.backward(analytic_loss.total);
    const auto grads = tape.grads();

    Result r;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    for (std::size_t a = 0; a < net.params.size(); ++a) {
        auto& arr = net.params[static_cast<int>(a)];
        std::vector<std::size_t> idx(arr.data.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min<std::size_t>(idx.size(), per_array));
        for (std::size_t k : idx) {
            const double orig = arr.data[k];
            auto at = [&](double offset) {
                arr.data[k] = orig + offset;
                return loss_at();
            };
            const double numeric = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
            arr.data[k] = orig;
            const double analytic = grads[a][k];
            const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
            ++r.sampled;
            if (rel <= tol) {
                ++r.passed;
            } else {
                ++r.failures[arr.name.substr(0, arr.name.rfind('.'))];
            }
            if (rel > r.worst) {
                r.worst = rel;
                r.worst_name = arr.name + "[" + std::to_string(k) + "]";
            }
        }
    }
    return r;
}

}  // namespace gradcheck
