#pragma once

#include <stdexcept>
#include <string>

#include "dmsr/model.hpp"

namespace dmsr {

struct LossWeights {
    double re = 1.0;
    double dr = 10.0;
    double dc = 1.0;
    // Per-term consistency toggles (the ablation rows switch LR and kernel+noise separately).
    bool dc_lr = true;
    bool dc_kernel = true;
    bool dc_noise = true;
    // Treat N_est / K_est as constants inside the kernel/noise consistency terms.
    bool stop_grad_targets = false;

    void validate() const;
};

struct LossBreakdown {
    double re = 0.0;
    double dr = 0.0;
    double dc_lr = 0.0;
    double dc_kernel = 0.0;
    double dc_noise = 0.0;
    double total = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(std::string term, const std::string& what) : std::runtime_error(what), term_(std::move(term)) {}
    const std::string& term() const { return term_; }

private:
    std::string term_;
};

// Mean absolute error over C*H*W.
double reconstruction_loss(const ImageTensor& sr, const ImageTensor& hr);
// mean((N_gt - N_est)^2) + mean((K_gt - K_est)^2)
double degradation_reconstruction_loss(const NoiseMap& n_est, const BlurKernel& k_est, const NoiseMap& n_gt,
                                       const BlurKernel& k_gt);

struct ConsistencyTerms {
    double dc_lr = 0.0;
    double dc_noise = 0.0;
    double dc_kernel = 0.0;
};

// Forms I_sim = (hr * k_est) downsampled by s + n_est, compares it to `lr`, then compares the
// extractor's estimates on I_sim with its estimates on `lr`.
ConsistencyTerms degradation_consistency_loss(const Network<float>& net, const ImageTensor& hr, const ImageTensor& lr,
                                              const BlurKernel& k_est, const NoiseMap& n_est, int s);

// Weighted sum; throws NonFiniteLoss naming the first non-finite part. Fills parts.total.
double overall_loss(LossBreakdown& parts, const LossWeights& w);

// Differentiable objective for one training sample --------------------------------------------

template <typename T>
struct SampleLoss {
    ag::Var<T> total;
    ForwardVars<T> forward;
    LossBreakdown parts;
};

struct TrainingTargets {
    const ImageTensor* hr = nullptr;          // sH x sW x 3
    const ImageTensor* lr_input = nullptr;    // network input (clamped)
    const ImageTensor* lr_target = nullptr;   // consistency target (pre-clamp when available)
    const BlurKernel* kernel_gt = nullptr;
    const NoiseMap* noise_gt = nullptr;
};

template <typename T>
SampleLoss<T> sample_loss(ag::Tape<T>& tape, const ModelConfig& config, const TrainingTargets& targets,
                          const LossWeights& weights);

}  // namespace dmsr
