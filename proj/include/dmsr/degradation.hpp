#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "dmsr/image.hpp"

namespace dmsr {

// Square blur kernel, row-major. Weights are kept in double so that normalization holds to 1e-9;
// the image pipeline applies them rounded to float.
struct BlurKernel {
    int size = 0;
    std::vector<double> weights;

    double at(int i, int j) const { return weights[static_cast<std::size_t>(i) * size + j]; }
    std::vector<float> as_float() const { return {weights.begin(), weights.end()}; }
};

BlurKernel gaussian_kernel(double width, int size = 15);
BlurKernel delta_kernel(int size = 15);

// Signed, same shape as the LR image.
using NoiseMap = ImageTensor;

struct DegradationSpec {
    double kernel_width = 1.3;  // sigma_k
    double noise_level = 0.0;   // sigma_n on the 0-255 scale
    int scale = 4;
    std::uint64_t seed = 0;
    int kernel_size = 15;
};

struct DegradedSample {
    ImageTensor lr;           // clamp(lr_preclamp)
    ImageTensor lr_preclamp;  // (hr * k) downsampled + noise, before clamping
    BlurKernel kernel_gt;
    NoiseMap noise_map_gt;
    DegradationSpec spec;
    ImageTensor hr_ref;
};

struct DegradationRanges {
    double kernel_width_min = 0.2;
    double kernel_width_max = 3.0;
    double noise_min = 0.0;
    double noise_max = 75.0;
    int scale = 4;
    int kernel_size = 15;
};

// 2-D correlation of every channel with the same kernel, reflect padding, same-size output.
ImageTensor blur(const ImageTensor& image, const BlurKernel& kernel);

// Antialiased cubic (a = -0.5) downscale by an integer factor; dimensions must be divisible by s.
ImageTensor bicubic_downsample(const ImageTensor& image, int s);
// Cubic upscale by an integer factor (the bicubic baseline).
ImageTensor bicubic_upsample(const ImageTensor& image, int s);

// Adds i.i.d. Normal(0, (sigma/255)^2) noise drawn from a generator seeded with `seed`.
// Returns the clamped image and the pre-clamp noise realization.
std::pair<ImageTensor, NoiseMap> add_awgn(const ImageTensor& image, double sigma, std::uint64_t seed);

// blur -> bicubic downsample -> AWGN, recording the ground truth kernel and noise map.
DegradedSample degrade(const ImageTensor& hr, const DegradationSpec& spec);

DegradationSpec sample_spec(const DegradationRanges& ranges, std::uint64_t seed);
DegradationSpec sample_spec(const DegradationRanges& ranges, std::mt19937_64& rng);

// Deterministic child seed for item `index` of a stream seeded with `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace dmsr
