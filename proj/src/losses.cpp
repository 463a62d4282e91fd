#include "dmsr/losses.hpp"

#include <cmath>

namespace dmsr {

using ag::Tape;
using ag::Var;

void LossWeights::validate() const {
    if (re < 0.0 || dr < 0.0 || dc < 0.0) throw std::invalid_argument("LossWeights: weights must be non-negative");
}

double reconstruction_loss(const ImageTensor& sr, const ImageTensor& hr) {
    if (!sr.same_shape(hr)) throw std::invalid_argument("reconstruction_loss: shape mismatch");
    double acc = 0.0;
    const auto a = sr.data(), b = hr.data();
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
    return acc / static_cast<double>(a.size());
}

double degradation_reconstruction_loss(const NoiseMap& n_est, const BlurKernel& k_est, const NoiseMap& n_gt,
                                       const BlurKernel& k_gt) {
    if (!n_est.same_shape(n_gt)) throw std::invalid_argument("degradation_reconstruction_loss: noise map shape mismatch");
    if (k_est.size != k_gt.size || k_est.weights.size() != k_gt.weights.size())
        throw std::invalid_argument("degradation_reconstruction_loss: kernel size mismatch");
    double noise = 0.0;
    const auto a = n_est.data(), b = n_gt.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(b[i]) - a[i];
        noise += d * d;
    }
    double kernel = 0.0;
    for (std::size_t i = 0; i < k_est.weights.size(); ++i) {
        const double d = k_gt.weights[i] - k_est.weights[i];
        kernel += d * d;
    }
    return noise / static_cast<double>(a.size()) + kernel / static_cast<double>(k_est.weights.size());
}

namespace {

template <typename T>
ag::Tensor<T> kernel_tensor(const BlurKernel& k) {
    ag::Tensor<T> t(1, k.size, k.size);
    // Round through float exactly as the image pipeline applies kernels.
    for (std::size_t i = 0; i < k.weights.size(); ++i) t.v[i] = static_cast<T>(static_cast<float>(k.weights[i]));
    return t;
}

// (hr * k) downsampled by s, plus noise
template <typename T>
Var<T> simulate_lr(Tape<T>& tape, const Var<T>& hr, const Var<T>& kernel, const Var<T>& noise, int s) {
    const auto& h = hr->value;
    if (h.h % s != 0 || h.w % s != 0) throw std::invalid_argument("degradation consistency: HR not divisible by scale");
    const auto ty = detail::cubic_axis_taps(h.h, h.h / s);
    const auto tx = detail::cubic_axis_taps(h.w, h.w / s);
    auto down = ag::resample(tape, ag::blur_reflect(tape, hr, kernel), ty, tx);
    if (!down->value.same_shape(noise->value)) throw std::invalid_argument("degradation consistency: noise map shape mismatch");
    return ag::add(tape, down, noise);
}

void check_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw NonFiniteLoss(term, std::string("non-finite loss term '") + term + "'");
}

}  // namespace

ConsistencyTerms degradation_consistency_loss(const Network<float>& net, const ImageTensor& hr, const ImageTensor& lr,
                                              const BlurKernel& k_est, const NoiseMap& n_est, int s) {
    if (k_est.size != net.config.blur_kernel_size) throw std::invalid_argument("degradation_consistency_loss: kernel size mismatch");
    Tape<float> tape(&net.params, false, false);
    auto hr_v = tape.constant(ag::to_tensor<float>(hr));
    auto sim = simulate_lr(tape, hr_v, tape.constant(kernel_tensor<float>(k_est)), tape.constant(ag::to_tensor<float>(n_est)), s);
    auto lr_v = tape.constant(ag::to_tensor<float>(lr));
    if (!sim->value.same_shape(lr_v->value)) throw std::invalid_argument("degradation_consistency_loss: LR shape mismatch");

    const auto ref = extractor_forward(tape, net.config, lr_v);
    const auto again = extractor_forward(tape, net.config, sim);
    ConsistencyTerms terms;
    terms.dc_lr = ag::mse_mean(tape, sim, lr_v)->value.v[0];
    terms.dc_noise = ag::mse_mean(tape, again.noise_map, ref.noise_map)->value.v[0];
    terms.dc_kernel = ag::mse_mean(tape, again.kernel, ref.kernel)->value.v[0];
    return terms;
}

double overall_loss(LossBreakdown& parts, const LossWeights& w) {
    check_finite(parts.re, "re");
    check_finite(parts.dr, "dr");
    check_finite(parts.dc_lr, "dc_lr");
    check_finite(parts.dc_kernel, "dc_kernel");
    check_finite(parts.dc_noise, "dc_noise");
    parts.total = w.re * parts.re + w.dr * parts.dr + w.dc * (parts.dc_lr + parts.dc_kernel + parts.dc_noise);
    return parts.total;
}

template <typename T>
SampleLoss<T> sample_loss(Tape<T>& tape, const ModelConfig& config, const TrainingTargets& t, const LossWeights& w) {
    w.validate();
    SampleLoss<T> out;
    auto lr = tape.constant(ag::to_tensor<T>(*t.lr_input));
    auto hr = tape.constant(ag::to_tensor<T>(*t.hr));
    out.forward = dmsr_forward(tape, config, lr);
    const auto& est = out.forward.estimate;

    std::vector<std::pair<Var<T>, T>> terms;
    auto re = ag::l1_mean(tape, out.forward.sr, hr);
    out.parts.re = static_cast<double>(re->value.v[0]);
    terms.emplace_back(re, static_cast<T>(w.re));

    auto dr_noise = ag::mse_mean(tape, est.noise_map, tape.constant(ag::to_tensor<T>(*t.noise_gt)));
    auto dr_kernel = ag::mse_mean(tape, est.kernel, tape.constant(kernel_tensor<T>(*t.kernel_gt)));
    out.parts.dr = static_cast<double>(dr_noise->value.v[0] + dr_kernel->value.v[0]);
    if (w.dr > 0.0) {
        terms.emplace_back(dr_noise, static_cast<T>(w.dr));
        terms.emplace_back(dr_kernel, static_cast<T>(w.dr));
    }

    const bool want_dc = w.dc > 0.0 && (w.dc_lr || w.dc_kernel || w.dc_noise);
    if (want_dc) {
        const auto sim = simulate_lr(tape, hr, est.kernel, est.noise_map, config.scale);
        if (w.dc_lr) {
            auto dc_lr = ag::mse_mean(tape, sim, tape.constant(ag::to_tensor<T>(*t.lr_target)));
            out.parts.dc_lr = static_cast<double>(dc_lr->value.v[0]);
            terms.emplace_back(dc_lr, static_cast<T>(w.dc));
        }
        if (w.dc_kernel || w.dc_noise) {
            const auto again = extractor_forward(tape, config, sim);
            auto n_ref = w.stop_grad_targets ? ag::detach(tape, est.noise_map) : est.noise_map;
            auto k_ref = w.stop_grad_targets ? ag::detach(tape, est.kernel) : est.kernel;
            if (w.dc_noise) {
                auto dc_noise = ag::mse_mean(tape, again.noise_map, n_ref);
                out.parts.dc_noise = static_cast<double>(dc_noise->value.v[0]);
                terms.emplace_back(dc_noise, static_cast<T>(w.dc));
            }
            if (w.dc_kernel) {
                auto dc_kernel = ag::mse_mean(tape, again.kernel, k_ref);
                out.parts.dc_kernel = static_cast<double>(dc_kernel->value.v[0]);
                terms.emplace_back(dc_kernel, static_cast<T>(w.dc));
            }
        }
    }
    overall_loss(out.parts, w);
    out.total = ag::weighted_sum(tape, terms);
    return out;
}

template SampleLoss<float> sample_loss<float>(Tape<float>&, const ModelConfig&, const TrainingTargets&, const LossWeights&);
template SampleLoss<double> sample_loss<double>(Tape<double>&, const ModelConfig&, const TrainingTargets&, const LossWeights&);

}  // namespace dmsr
