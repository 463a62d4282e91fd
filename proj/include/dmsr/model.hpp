#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmsr/autograd.hpp"
#include "dmsr/degradation.hpp"
#include "dmsr/kernel_space.hpp"

namespace dmsr {

enum class MnmMode { NoiseMap, NoiseScalar };

struct ModelConfig {
    int channels = 64;            // SR network feature width
    int extractor_channels = 64;  // degradation extractor feature width
    int n_groups = 5;
    int n_rcab_per_group = 20;
    int ca_reduction = 16;
    int kernel_size = 3;
    int mnm_kernel_size = 3;  // 1 gives the pure per-pixel meta-bias reading
    int blur_kernel_size = 15;
    int embed_dim = 15;
    int scale = 4;
    int n_mbm = 1;
    MnmMode mnm_mode = MnmMode::NoiseMap;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// 64 channels, 5 groups of 20 RCABs.
ModelConfig paper_config(int scale);
// 8 channels, 1 group of 2 RCABs, 5 x 5 blur kernel.
ModelConfig tiny_config(int scale);

std::string to_string(MnmMode mode);
MnmMode parse_mnm_mode(const std::string& text);

// Learnable arrays plus the architecture they were built for.
template <typename T>
struct Network {
    ModelConfig config;
    ag::ParameterSet<T> params;
    std::uint64_t pca_hash = 0;

    template <typename U>
    Network<U> cast() const {
        return Network<U>{config, params.template cast<U>(), pca_hash};
    }
};

// Builds and initializes every array: Kaiming fan-in normal for convolutions, zero biases, the PCA
// matrix for the MBM embedding, x0.1 on the last conv of every RCAB residual path, and an
// identity-preserving start for the MBM weight generator and output conv.
template <typename T>
Network<T> make_network(const ModelConfig& config, const PcaProjection& pca, std::uint64_t seed);
// Same, with the default kernel pool (10,000 widths over [0.2, 3.0]).
template <typename T>
Network<T> make_network(const ModelConfig& config, std::uint64_t seed);

// Names, shapes and initializer ids of every learnable array, all zero.
template <typename T>
ag::ParameterSet<T> parameter_layout(const ModelConfig& config);

PcaProjection default_pca(const ModelConfig& config);

// Graph-level building blocks ---------------------------------------------------------------

template <typename T>
struct ExtractorVars {
    ag::Var<T> noise_map;  // 3 x H x W
    ag::Var<T> kernel;     // 1 x k x k, softmax simplex
};

template <typename T>
struct ForwardVars {
    ag::Var<T> sr;  // unclamped
    ExtractorVars<T> estimate;
};

template <typename T>
ExtractorVars<T> extractor_forward(ag::Tape<T>& tape, const ModelConfig& config, const ag::Var<T>& lr);
template <typename T>
ag::Var<T> mnm_forward(ag::Tape<T>& tape, const ModelConfig& config, const ag::Var<T>& lr, const ag::Var<T>& noise_map);
template <typename T>
ag::Var<T> backbone_forward(ag::Tape<T>& tape, const ModelConfig& config, const ag::Var<T>& features);
// Embedding -> spatial repeat -> concat with the coarse image -> conv producing (k*k) x sH x sW.
template <typename T>
ag::Var<T> mbm_weight_field(ag::Tape<T>& tape, const ModelConfig& config, int index, const ag::Var<T>& coarse,
                            const ag::Var<T>& kernel_est);
template <typename T>
ag::Var<T> mbm_embedding(ag::Tape<T>& tape, const ModelConfig& config, int index, const ag::Var<T>& kernel_est);
template <typename T>
ag::Var<T> mbm_forward(ag::Tape<T>& tape, const ModelConfig& config, int index, const ag::Var<T>& coarse,
                       const ag::Var<T>& kernel_est);
template <typename T>
ForwardVars<T> dmsr_forward(ag::Tape<T>& tape, const ModelConfig& config, const ag::Var<T>& lr);

// Image-level convenience API (float, no gradient retention) ----------------------------------

struct ExtractorOutput {
    NoiseMap noise_map_est;  // H x W x 3
    BlurKernel kernel_est;
};

ExtractorOutput extract(const Network<float>& net, const ImageTensor& lr);
// Returns the SR image clamped to [0,1]; `estimate` receives the extractor output when non-null.
ImageTensor super_resolve(const Network<float>& net, const ImageTensor& lr, ExtractorOutput* estimate = nullptr);

struct ParameterCounts {
    std::map<std::string, std::int64_t> components;  // "extractor", "sr_network", ...
    std::int64_t total = 0;
};

// Components are the first dotted segment of each array name.
template <typename T>
ParameterCounts count_parameters(const ag::ParameterSet<T>& params);

}  // namespace dmsr
