#include "dmsr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "dmsr/degradation.hpp"

namespace dmsr {

Dataset load_image_folder(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    Dataset ds;
    ds.name = dir.filename().string();
    for (const auto& f : files) {
        ds.images.push_back(read_png(f));
        ds.files.push_back(f.filename().string());
    }
    return ds;
}

ImageTensor synthetic_image(int height, int width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageTensor img(height, width, 3);

    // Smooth background: per-channel bilinear gradient between random corner colors.
    double corners[4][3];
    for (auto& c : corners)
        for (double& v : c) v = 0.15 + 0.7 * u(rng);
    for (int y = 0; y < height; ++y) {
        const double fy = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
        for (int x = 0; x < width; ++x) {
            const double fx = width > 1 ? static_cast<double>(x) / (width - 1) : 0.0;
            for (int c = 0; c < 3; ++c) {
                const double top = corners[0][c] * (1 - fx) + corners[1][c] * fx;
                const double bottom = corners[2][c] * (1 - fx) + corners[3][c] * fx;
                img.at(y, x, c) = static_cast<float>(top * (1 - fy) + bottom * fy);
            }
        }
    }

    const int n_shapes = 6 + static_cast<int>(u(rng) * 8);
    for (int s = 0; s < n_shapes; ++s) {
        const int kind = static_cast<int>(u(rng) * 3);
        const double cy = u(rng) * height, cx = u(rng) * width;
        const double ry = (0.05 + 0.3 * u(rng)) * height, rx = (0.05 + 0.3 * u(rng)) * width;
        const double angle = u(rng) * std::numbers::pi;
        const double ca = std::cos(angle), sa = std::sin(angle);
        double color[3];
        for (double& v : color) v = u(rng);
        const double freq = 0.3 + 1.2 * u(rng);  // stripe frequency in radians per pixel
        const double alpha = 0.6 + 0.4 * u(rng);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double a = (ca * dx + sa * dy) / rx, b = (-sa * dx + ca * dy) / ry;
                bool inside = false;
                double shade = 1.0;
                switch (kind) {
                    case 0: inside = a * a + b * b <= 1.0; break;                       // ellipse
                    case 1: inside = std::abs(a) <= 1.0 && std::abs(b) <= 1.0; break;   // rotated rectangle
                    default:                                                            // striped patch
                        inside = std::abs(a) <= 1.0 && std::abs(b) <= 1.0;
                        shade = 0.5 + 0.5 * std::sin(freq * (ca * dx + sa * dy));
                        break;
                }
                if (!inside) continue;
                for (int c = 0; c < 3; ++c) {
                    const double v = color[c] * shade;
                    img.at(y, x, c) = static_cast<float>((1 - alpha) * img.at(y, x, c) + alpha * v);
                }
            }
        }
    }

    // Fine grain so that the images carry some high-frequency content everywhere.
    std::normal_distribution<double> grain(0.0, 0.02);
    for (auto& v : img.data()) v = std::clamp(static_cast<float>(v + grain(rng)), 0.0f, 1.0f);
    return img;
}

Dataset synthetic_dataset(int count, int height, int width, std::uint64_t seed, std::string name) {
    Dataset ds;
    ds.name = std::move(name);
    for (int i = 0; i < count; ++i) {
        ds.images.push_back(synthetic_image(height, width, derive_seed(seed, static_cast<std::uint64_t>(i))));
        ds.files.push_back("synthetic_" + std::to_string(i) + ".png");
    }
    return ds;
}

}  // namespace dmsr
