#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmsr {

// H x W x C pixels, channel-last, row-major. Values are nominally in [0,1].
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int height, int width, int channels, float fill = 0.0f);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& at(int y, int x, int c) { return data_[index(y, x, c)]; }
    float at(int y, int x, int c) const { return data_[index(y, x, c)]; }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    bool same_shape(const ImageTensor& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    // Channel c as a contiguous H*W plane.
    std::vector<float> plane(int c) const;
    void set_plane(int c, std::span<const float> values);

    void clamp01();
    ImageTensor crop(int y0, int x0, int h, int w) const;

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

// Crops so that height and width become multiples of `multiple` (top-left anchored).
ImageTensor crop_to_multiple(const ImageTensor& image, int multiple);

// One of the 8 dihedral transforms: bit 0 = horizontal flip, bits 1-2 = number of 90 degree rotations.
ImageTensor dihedral(const ImageTensor& image, int variant);

// 8-bit PNG, values mapped linearly to/from [0,1]. Gray and gray+alpha are expanded to RGB,
// alpha is dropped.
ImageTensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageTensor& image);

// Small binary container for kernels, noise maps and projections:
//   "DMSB" | u32 version | u32 ndims | u32 dims[ndims] | f32 values (little endian)
struct Blob {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

inline constexpr std::uint32_t kBlobVersion = 1;

void write_blob(const std::filesystem::path& path, const Blob& blob);
Blob read_blob(const std::filesystem::path& path);

// Little-endian helpers shared with the checkpoint container.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f32s(std::string& out, std::span<const float> values);
std::uint32_t get_u32(std::string_view in, std::size_t& pos);
std::uint64_t get_u64(std::string_view in, std::size_t& pos);
void get_f32s(std::string_view in, std::size_t& pos, std::span<float> out);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// FNV-1a over the raw float bytes; used to tag checkpoints with the projection they were built from.
std::uint64_t hash_floats(std::span<const float> values);

}  // namespace dmsr
