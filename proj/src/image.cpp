#include "dmsr/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace dmsr {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

ImageTensor::ImageTensor(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
    if (height < 1 || width < 1 || channels < 1)
        throw std::invalid_argument("ImageTensor: dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

std::vector<float> ImageTensor::plane(int c) const {
    std::vector<float> out(static_cast<std::size_t>(height_) * width_);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = data_[i * channels_ + c];
    return out;
}

void ImageTensor::set_plane(int c, std::span<const float> values) {
    if (values.size() != static_cast<std::size_t>(height_) * width_)
        throw std::invalid_argument("set_plane: size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) data_[i * channels_ + c] = values[i];
}

void ImageTensor::clamp01() {
    for (auto& v : data_) v = std::clamp(v, 0.0f, 1.0f);
}

ImageTensor ImageTensor::crop(int y0, int x0, int h, int w) const {
    if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > height_ || x0 + w > width_)
        throw std::invalid_argument("crop: region outside image");
    ImageTensor out(h, w, channels_);
    for (int y = 0; y < h; ++y) {
        const float* src = &data_[index(y0 + y, x0, 0)];
        std::copy(src, src + static_cast<std::size_t>(w) * channels_, &out.at(y, 0, 0));
    }
    return out;
}

ImageTensor crop_to_multiple(const ImageTensor& image, int multiple) {
    const int h = image.height() / multiple * multiple;
    const int w = image.width() / multiple * multiple;
    if (h < 1 || w < 1) throw std::invalid_argument("crop_to_multiple: image smaller than multiple");
    if (h == image.height() && w == image.width()) return image;
    return image.crop(0, 0, h, w);
}

ImageTensor dihedral(const ImageTensor& image, int variant) {
    if (variant < 0 || variant > 7) throw std::invalid_argument("dihedral: variant must be in [0,8)");
    ImageTensor cur = image;
    if (variant & 1) {
        ImageTensor flipped(cur.height(), cur.width(), cur.channels());
        for (int y = 0; y < cur.height(); ++y)
            for (int x = 0; x < cur.width(); ++x)
                for (int c = 0; c < cur.channels(); ++c)
                    flipped.at(y, x, c) = cur.at(y, cur.width() - 1 - x, c);
        cur = std::move(flipped);
    }
    for (int r = 0; r < (variant >> 1); ++r) {
        // 90 degrees counter-clockwise
        ImageTensor rot(cur.width(), cur.height(), cur.channels());
        for (int y = 0; y < rot.height(); ++y)
            for (int x = 0; x < rot.width(); ++x)
                for (int c = 0; c < cur.channels(); ++c)
                    rot.at(y, x, c) = cur.at(x, cur.width() - 1 - y, c);
        cur = std::move(rot);
    }
    return cur;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return f;
}

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("libpng: ") + msg); }
void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

ImageTensor read_png(const std::filesystem::path& path) {
    auto file = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};

    png_init_io(png, file.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_expand(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    if (channels != 3) throw std::runtime_error("read_png: unsupported channel layout in " + path.string());

    std::vector<png_byte> buffer(static_cast<std::size_t>(width) * height * 3);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = &buffer[static_cast<std::size_t>(y) * width * 3];
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);

    ImageTensor image(height, width, 3);
    auto data = image.data();
    for (std::size_t i = 0; i < buffer.size(); ++i) data[i] = static_cast<float>(buffer[i]) / 255.0f;
    return image;
}

void write_png(const std::filesystem::path& path, const ImageTensor& image) {
    if (image.channels() != 1 && image.channels() != 3) throw std::invalid_argument("write_png: need 1 or 3 channels");
    auto file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};

    png_init_io(png, file.get());
    png_set_IHDR(png, info, image.width(), image.height(), 8,
                 image.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(image.width()) * image.channels());
    auto data = image.data();
    for (int y = 0; y < image.height(); ++y) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            const float v = std::clamp(data[static_cast<std::size_t>(y) * row.size() + i], 0.0f, 1.0f);
            row[i] = static_cast<png_byte>(std::lround(v * 255.0f));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
}

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

void put_f32s(std::string& out, std::span<const float> values) {
    out.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
}

static void need(std::string_view in, std::size_t pos, std::size_t n) {
    if (pos + n > in.size()) throw std::runtime_error("truncated binary container");
}

std::uint32_t get_u32(std::string_view in, std::size_t& pos) {
    need(in, pos, 4);
    std::uint32_t v;
    std::memcpy(&v, in.data() + pos, 4);
    pos += 4;
    return v;
}

std::uint64_t get_u64(std::string_view in, std::size_t& pos) {
    need(in, pos, 8);
    std::uint64_t v;
    std::memcpy(&v, in.data() + pos, 8);
    pos += 8;
    return v;
}

void get_f32s(std::string_view in, std::size_t& pos, std::span<float> out) {
    need(in, pos, out.size_bytes());
    std::memcpy(out.data(), in.data() + pos, out.size_bytes());
    pos += out.size_bytes();
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_blob(const std::filesystem::path& path, const Blob& blob) {
    std::size_t expected = 1;
    for (auto d : blob.dims) expected *= d;
    if (blob.dims.empty() || expected != blob.values.size()) throw std::invalid_argument("write_blob: dims do not match values");
    std::string out = "DMSB";
    put_u32(out, kBlobVersion);
    put_u32(out, static_cast<std::uint32_t>(blob.dims.size()));
    for (auto d : blob.dims) put_u32(out, d);
    put_f32s(out, blob.values);
    write_file(path, out);
}

Blob read_blob(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 12 || bytes.compare(0, 4, "DMSB") != 0) throw std::runtime_error("not a DMSB container: " + path.string());
    std::size_t pos = 4;
    if (get_u32(bytes, pos) != kBlobVersion) throw std::runtime_error("unsupported DMSB version in " + path.string());
    Blob blob;
    blob.dims.resize(get_u32(bytes, pos));
    std::size_t count = 1;
    for (auto& d : blob.dims) {
        d = get_u32(bytes, pos);
        count *= d;
    }
    blob.values.resize(count);
    get_f32s(bytes, pos, blob.values);
    if (pos != bytes.size()) throw std::runtime_error("trailing bytes in " + path.string());
    return blob;
}

std::uint64_t hash_floats(std::span<const float> values) {
    std::uint64_t h = 1469598103934665603ull;
    const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
    for (std::size_t i = 0; i < values.size_bytes(); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace dmsr
