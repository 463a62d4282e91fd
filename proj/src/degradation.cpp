#include "dmsr/degradation.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dmsr/detail/planar.hpp"

namespace dmsr {

BlurKernel gaussian_kernel(double width, int size) {
    if (!(width > 0.0)) throw std::invalid_argument("gaussian_kernel: width must be positive");
    if (size < 1 || size % 2 == 0) throw std::invalid_argument("gaussian_kernel: size must be odd");
    BlurKernel k{size, std::vector<double>(static_cast<std::size_t>(size) * size)};
    const double c = (size - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
            const double d2 = (i - c) * (i - c) + (j - c) * (j - c);
            const double v = std::exp(-d2 / (2.0 * width * width));
            k.weights[static_cast<std::size_t>(i) * size + j] = v;
            total += v;
        }
    }
    for (auto& v : k.weights) v /= total;
    return k;
}

BlurKernel delta_kernel(int size) {
    if (size < 1 || size % 2 == 0) throw std::invalid_argument("delta_kernel: size must be odd");
    BlurKernel k{size, std::vector<double>(static_cast<std::size_t>(size) * size, 0.0)};
    k.weights[static_cast<std::size_t>(size / 2) * size + size / 2] = 1.0;
    return k;
}

ImageTensor blur(const ImageTensor& image, const BlurKernel& kernel) {
    if (kernel.size < 1 || kernel.size % 2 == 0 || kernel.weights.size() != static_cast<std::size_t>(kernel.size) * kernel.size)
        throw std::invalid_argument("blur: malformed kernel");
    if (kernel.size > image.height() || kernel.size > image.width())
        throw std::invalid_argument("blur: kernel larger than image");
    const auto kf = kernel.as_float();
    ImageTensor out(image.height(), image.width(), image.channels());
    std::vector<float> result(static_cast<std::size_t>(image.height()) * image.width());
    for (int c = 0; c < image.channels(); ++c) {
        const auto plane = image.plane(c);
        detail::correlate_reflect<float>(plane, image.height(), image.width(), kf, kernel.size, result);
        out.set_plane(c, result);
    }
    return out;
}

static ImageTensor resample(const ImageTensor& image, int out_h, int out_w) {
    const auto ty = detail::cubic_axis_taps(image.height(), out_h);
    const auto tx = detail::cubic_axis_taps(image.width(), out_w);
    ImageTensor out(out_h, out_w, image.channels());
    std::vector<float> result(static_cast<std::size_t>(out_h) * out_w);
    for (int c = 0; c < image.channels(); ++c) {
        const auto plane = image.plane(c);
        detail::resample_plane<float>(plane, ty, tx, result);
        out.set_plane(c, result);
    }
    return out;
}

ImageTensor bicubic_downsample(const ImageTensor& image, int s) {
    if (s < 1) throw std::invalid_argument("bicubic_downsample: scale must be positive");
    if (image.height() % s != 0 || image.width() % s != 0)
        throw std::invalid_argument("bicubic_downsample: dimensions " + std::to_string(image.height()) + "x" +
                                    std::to_string(image.width()) + " not divisible by " + std::to_string(s));
    return resample(image, image.height() / s, image.width() / s);
}

ImageTensor bicubic_upsample(const ImageTensor& image, int s) {
    if (s < 1) throw std::invalid_argument("bicubic_upsample: scale must be positive");
    return resample(image, image.height() * s, image.width() * s);
}

std::pair<ImageTensor, NoiseMap> add_awgn(const ImageTensor& image, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("add_awgn: sigma must be non-negative");
    NoiseMap noise(image.height(), image.width(), image.channels(), 0.0f);
    ImageTensor out = image;
    if (sigma > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, sigma / 255.0);
        auto n = noise.data();
        auto o = out.data();
        for (std::size_t i = 0; i < n.size(); ++i) {
            n[i] = static_cast<float>(normal(rng));
            o[i] += n[i];
        }
        out.clamp01();
    }
    return {std::move(out), std::move(noise)};
}

DegradedSample degrade(const ImageTensor& hr, const DegradationSpec& spec) {
    if (spec.scale < 1) throw std::invalid_argument("degrade: scale must be positive");
    DegradedSample sample;
    sample.spec = spec;
    sample.hr_ref = hr;
    sample.kernel_gt = gaussian_kernel(spec.kernel_width, spec.kernel_size);
    const ImageTensor clean = bicubic_downsample(blur(hr, sample.kernel_gt), spec.scale);
    auto [lr, noise] = add_awgn(clean, spec.noise_level, spec.seed);
    // add_awgn clamps; keep the unclamped sum for exact reconstruction.
    sample.lr_preclamp = clean;
    auto pre = sample.lr_preclamp.data();
    auto n = noise.data();
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += n[i];
    sample.lr = std::move(lr);
    sample.noise_map_gt = std::move(noise);
    return sample;
}

static double uniform_in(double lo, double hi, std::mt19937_64& rng, const char* what) {
    if (!(lo <= hi)) throw std::invalid_argument(std::string("sample_spec: empty ") + what + " range");
    if (lo == hi) {
        rng.discard(1);
        return lo;
    }
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

DegradationSpec sample_spec(const DegradationRanges& ranges, std::mt19937_64& rng) {
    if (!(ranges.kernel_width_min > 0.0)) throw std::invalid_argument("sample_spec: kernel width must be positive");
    if (ranges.noise_min < 0.0) throw std::invalid_argument("sample_spec: noise level must be non-negative");
    DegradationSpec spec;
    spec.kernel_width = uniform_in(ranges.kernel_width_min, ranges.kernel_width_max, rng, "kernel width");
    spec.noise_level = uniform_in(ranges.noise_min, ranges.noise_max, rng, "noise");
    spec.scale = ranges.scale;
    spec.kernel_size = ranges.kernel_size;
    spec.seed = rng();
    return spec;
}

DegradationSpec sample_spec(const DegradationRanges& ranges, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_spec(ranges, rng);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace dmsr
