#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmsr/image.hpp"

namespace dmsr {

struct Dataset {
    std::string name;
    std::vector<ImageTensor> images;
    std::vector<std::string> files;
};

// Every *.png directly inside `dir`, sorted by filename.
Dataset load_image_folder(const std::filesystem::path& dir);

// Procedural RGB test image: smooth background, random filled shapes, stripes and fine texture.
// Deterministic in (height, width, seed).
ImageTensor synthetic_image(int height, int width, std::uint64_t seed);
Dataset synthetic_dataset(int count, int height, int width, std::uint64_t seed, std::string name = "synthetic");

}  // namespace dmsr
