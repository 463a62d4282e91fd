#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dmsr/dataset.hpp"
#include "dmsr/degradation.hpp"

namespace dmsr {

// BT.601 limited range luma on the 0-255 scale, H x W x 1.
ImageTensor rgb_to_y(const ImageTensor& image);

// Both metrics crop `crop` pixels from every border of the Y planes first.
// Identical inputs give +infinity.
double psnr_y(const ImageTensor& a, const ImageTensor& b, int crop);
// 11x11 Gaussian window (sigma 1.5), valid region only.
double ssim_y(const ImageTensor& a, const ImageTensor& b, int crop);

struct BenchmarkGrid {
    std::vector<int> scales{2, 3, 4};
    std::vector<double> kernel_widths{0.2, 1.3, 2.6};
    std::vector<double> noise_levels{15.0, 50.0};
    std::uint64_t seed = 0;
    int kernel_size = 15;
};

struct EvalCell {
    std::string dataset;
    int scale = 0;
    double kernel_width = 0.0;
    double noise_level = 0.0;
    double psnr = 0.0;  // mean over successful images
    double ssim = 0.0;
    double bicubic_psnr = 0.0;
    double bicubic_ssim = 0.0;
    int images = 0;
    int failures = 0;
};

struct EvalReport {
    std::vector<EvalCell> rows;  // dataset-major, then noise, kernel width, scale
    std::string model_id;
    std::string crop_rule = "scale";
    std::string date;

    const EvalCell* find(const std::string& dataset, int scale, double kernel_width, double noise_level) const;
};

// Maps an LR image to an image `scale` times larger.
using SrModel = std::function<ImageTensor(const ImageTensor& lr, int scale)>;

SrModel bicubic_model();

// Degradation seeds depend only on (grid seed, dataset name, cell, image index).
std::uint64_t eval_seed(std::uint64_t grid_seed, const std::string& dataset, int scale, double kernel_width,
                        double noise_level, int image_index);

EvalReport run_benchmark(const SrModel& model, const std::vector<Dataset>& datasets, const BenchmarkGrid& grid,
                         const std::string& model_id);

std::string report_csv(const EvalReport& report);
// One block per (noise, kernel width) pair with datasets x scales as columns, noise-major.
std::string report_markdown(const EvalReport& report);

struct WindowTile {
    int row = 0, col = 0;
    double noise_level = 0.0;
    double kernel_width = 0.0;
    int y0 = 0, x0 = 0;  // position inside the mosaic
    std::uint64_t seed = 0;
    ImageTensor lr;
};

struct DegradationWindow {
    std::vector<WindowTile> tiles;  // row-major: rows are noise levels, columns kernel widths
    ImageTensor mosaic;
};

const std::vector<double>& window_noise_levels();   // 6 values
const std::vector<double>& window_kernel_widths();  // 4 values

DegradationWindow degradation_window(const ImageTensor& image, int scale, std::uint64_t seed, int kernel_size = 15);
std::string window_manifest_json(const DegradationWindow& window, int scale);

}  // namespace dmsr
