#include "dmsr/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dmsr {

ImageTensor rgb_to_y(const ImageTensor& image) {
    if (image.channels() != 3)
        throw std::invalid_argument("rgb_to_y: expected 3 channels, got " + std::to_string(image.channels()));
    ImageTensor y(image.height(), image.width(), 1);
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c) {
            const double v = 16.0 + 65.481 * image.at(r, c, 0) + 128.553 * image.at(r, c, 1) + 24.966 * image.at(r, c, 2);
            y.at(r, c, 0) = static_cast<float>(v);
        }
    return y;
}

namespace {

// Y planes as doubles after the border crop.
std::vector<double> cropped_y(const ImageTensor& image, int crop, int& h, int& w) {
    if (crop < 0) throw std::invalid_argument("metric crop must be >= 0");
    const ImageTensor y = rgb_to_y(image);
    h = image.height() - 2 * crop;
    w = image.width() - 2 * crop;
    if (h <= 0 || w <= 0) throw std::invalid_argument("image too small for a border crop of " + std::to_string(crop));
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out[static_cast<std::size_t>(r) * w + c] = y.at(r + crop, c + crop, 0);
    return out;
}

void check_pair(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("metric inputs differ in shape");
}

}  // namespace

double psnr_y(const ImageTensor& a, const ImageTensor& b, int crop) {
    check_pair(a, b);
    int h = 0, w = 0;
    const auto ya = cropped_y(a, crop, h, w);
    const auto yb = cropped_y(b, crop, h, w);
    double se = 0.0;
    for (std::size_t i = 0; i < ya.size(); ++i) se += (ya[i] - yb[i]) * (ya[i] - yb[i]);
    const double mse = se / static_cast<double>(ya.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim_y(const ImageTensor& a, const ImageTensor& b, int crop) {
    check_pair(a, b);
    int h = 0, w = 0;
    const auto ya = cropped_y(a, crop, h, w);
    const auto yb = cropped_y(b, crop, h, w);
    constexpr int kWin = 11;
    if (h < kWin || w < kWin) throw std::invalid_argument("ssim_y: need at least 11x11 pixels after the border crop");

    // Separable normalized Gaussian.
    double g[kWin], sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kWin / 2;
        g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += g[i];
    }
    for (double& v : g) v /= sum;

    const int oh = h - kWin + 1, ow = w - kWin + 1;
    // Horizontal pass of the five moments, then vertical.
    auto filter = [&](auto f) {
        std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < ow; ++c) {
                double s = 0.0;
                for (int k = 0; k < kWin; ++k) s += g[k] * f(static_cast<std::size_t>(r) * w + c + k);
                tmp[static_cast<std::size_t>(r) * ow + c] = s;
            }
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                double s = 0.0;
                for (int k = 0; k < kWin; ++k) s += g[k] * tmp[static_cast<std::size_t>(r + k) * ow + c];
                out[static_cast<std::size_t>(r) * ow + c] = s;
            }
        return out;
    };
    const auto mu_a = filter([&](std::size_t i) { return ya[i]; });
    const auto mu_b = filter([&](std::size_t i) { return yb[i]; });
    const auto aa = filter([&](std::size_t i) { return ya[i] * ya[i]; });
    const auto bb = filter([&](std::size_t i) { return yb[i] * yb[i]; });
    const auto ab = filter([&](std::size_t i) { return ya[i] * yb[i]; });

    const double c1 = (0.01 * 255.0) * (0.01 * 255.0), c2 = (0.03 * 255.0) * (0.03 * 255.0);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = aa[i] - mu_a[i] * mu_a[i];
        const double vb = bb[i] - mu_b[i] * mu_b[i];
        const double cov = ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

const EvalCell* EvalReport::find(const std::string& dataset, int scale, double kernel_width, double noise_level) const {
    for (const auto& r : rows)
        if (r.dataset == dataset && r.scale == scale && r.kernel_width == kernel_width && r.noise_level == noise_level)
            return &r;
    return nullptr;
}

SrModel bicubic_model() {
    return [](const ImageTensor& lr, int scale) {
        auto up = bicubic_upsample(lr, scale);
        up.clamp01();
        return up;
    };
}

std::uint64_t eval_seed(std::uint64_t grid_seed, const std::string& dataset, int scale, double kernel_width,
                        double noise_level, int image_index) {
    // FNV-1a over the dataset name, then the cell coordinates folded in through derive_seed.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : dataset) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::uint64_t s = derive_seed(grid_seed, h);
    s = derive_seed(s, static_cast<std::uint64_t>(scale));
    s = derive_seed(s, static_cast<std::uint64_t>(std::llround(kernel_width * 1000.0)));
    s = derive_seed(s, static_cast<std::uint64_t>(std::llround(noise_level * 1000.0)));
    return derive_seed(s, static_cast<std::uint64_t>(image_index));
}

namespace {

std::string today() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%d");
    return os.str();
}

}  // namespace

EvalReport run_benchmark(const SrModel& model, const std::vector<Dataset>& datasets, const BenchmarkGrid& grid,
                         const std::string& model_id) {
    EvalReport report;
    report.model_id = model_id;
    report.date = today();
    for (const auto& ds : datasets) {
        for (double noise : grid.noise_levels)
            for (double width : grid.kernel_widths)
                for (int scale : grid.scales) {
                    EvalCell cell;
                    cell.dataset = ds.name;
                    cell.scale = scale;
                    cell.kernel_width = width;
                    cell.noise_level = noise;
                    for (std::size_t i = 0; i < ds.images.size(); ++i) {
                        try {
                            const ImageTensor hr = crop_to_multiple(ds.images[i], scale);
                            DegradationSpec spec{width, noise, scale,
                                                 eval_seed(grid.seed, ds.name, scale, width, noise, static_cast<int>(i)),
                                                 grid.kernel_size};
                            const auto sample = degrade(hr, spec);
                            const ImageTensor sr = model(sample.lr, scale);
                            const ImageTensor bic = bicubic_model()(sample.lr, scale);
                            const double p = psnr_y(sr, hr, scale), q = ssim_y(sr, hr, scale);
                            const double bp = psnr_y(bic, hr, scale), bq = ssim_y(bic, hr, scale);
                            cell.psnr += p;
                            cell.ssim += q;
                            cell.bicubic_psnr += bp;
                            cell.bicubic_ssim += bq;
                            ++cell.images;
                        } catch (const std::exception& e) {
                            std::cerr << "eval: " << ds.name << " image " << i
                                      << (i < ds.files.size() ? " (" + ds.files[i] + ")" : std::string()) << " x" << scale
                                      << " sigma_k=" << width << " sigma_n=" << noise << " failed: " << e.what() << '\n';
                            ++cell.failures;
                        }
                    }
                    if (cell.images > 0) {
                        cell.psnr /= cell.images;
                        cell.ssim /= cell.images;
                        cell.bicubic_psnr /= cell.images;
                        cell.bicubic_ssim /= cell.images;
                    }
                    report.rows.push_back(cell);
                }
    }
    return report;
}

namespace {

std::string fmt(double v, int precision) {
    if (std::isinf(v)) return "inf";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

std::string fmt_g(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

std::string report_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "# model=" << r.model_id << " crop=" << r.crop_rule << " date=" << r.date << '\n';
    os << "dataset,scale,sigma_k,sigma_n,psnr,ssim,bicubic_psnr,bicubic_ssim,images,failures\n";
    for (const auto& c : r.rows)
        os << c.dataset << ',' << c.scale << ',' << fmt_g(c.kernel_width) << ',' << fmt_g(c.noise_level) << ','
           << fmt(c.psnr, 4) << ',' << fmt(c.ssim, 6) << ',' << fmt(c.bicubic_psnr, 4) << ',' << fmt(c.bicubic_ssim, 6)
           << ',' << c.images << ',' << c.failures << '\n';
    return os.str();
}

std::string report_markdown(const EvalReport& r) {
    std::vector<std::string> datasets;
    std::vector<int> scales;
    std::vector<std::pair<double, double>> blocks;  // (noise, width)
    auto push_unique = [](auto& v, const auto& x) {
        if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
    };
    for (const auto& c : r.rows) {
        push_unique(datasets, c.dataset);
        push_unique(scales, c.scale);
        push_unique(blocks, std::make_pair(c.noise_level, c.kernel_width));
    }

    std::ostringstream os;
    os << "Model: " << r.model_id << "  \nPSNR (dB) / SSIM on Y, border crop = " << r.crop_rule << ", " << r.date << "\n\n";
    os << "| [σ_k, σ_n] | Method |";
    for (const auto& d : datasets)
        for (int s : scales) os << ' ' << d << " ×" << s << " |";
    os << "\n|---|---|";
    for (std::size_t i = 0; i < datasets.size() * scales.size(); ++i) os << "---|";
    os << '\n';
    for (const auto& [noise, width] : blocks) {
        const std::string label = "[" + fmt_g(width) + ", " + fmt_g(noise) + "]";
        for (int method = 0; method < 2; ++method) {
            os << "| " << (method == 0 ? label : std::string()) << " | " << (method == 0 ? "Bicubic" : "DMSR") << " |";
            for (const auto& d : datasets)
                for (int s : scales) {
                    const auto* c = r.find(d, s, width, noise);
                    if (!c || c->images == 0) {
                        os << " - |";
                        continue;
                    }
                    const double p = method == 0 ? c->bicubic_psnr : c->psnr;
                    const double q = method == 0 ? c->bicubic_ssim : c->ssim;
                    os << ' ' << fmt(p, 2) << " / " << fmt(q, 4) << " |";
                }
            os << '\n';
        }
    }
    return os.str();
}

const std::vector<double>& window_noise_levels() {
    static const std::vector<double> v{0, 15, 30, 45, 60, 75};
    return v;
}

const std::vector<double>& window_kernel_widths() {
    static const std::vector<double> v{0.2, 1.2, 2.1, 3.0};
    return v;
}

DegradationWindow degradation_window(const ImageTensor& image, int scale, std::uint64_t seed, int kernel_size) {
    const ImageTensor hr = crop_to_multiple(image, scale);
    const auto& noises = window_noise_levels();
    const auto& widths = window_kernel_widths();
    constexpr int kGap = 2;
    const int th = hr.height() / scale, tw = hr.width() / scale;
    DegradationWindow out;
    out.mosaic = ImageTensor(static_cast<int>(noises.size()) * (th + kGap) - kGap,
                             static_cast<int>(widths.size()) * (tw + kGap) - kGap, 3, 1.0f);
    for (std::size_t r = 0; r < noises.size(); ++r)
        for (std::size_t c = 0; c < widths.size(); ++c) {
            WindowTile t;
            t.row = static_cast<int>(r);
            t.col = static_cast<int>(c);
            t.noise_level = noises[r];
            t.kernel_width = widths[c];
            t.seed = derive_seed(seed, r * widths.size() + c);
            t.y0 = t.row * (th + kGap);
            t.x0 = t.col * (tw + kGap);
            t.lr = degrade(hr, DegradationSpec{t.kernel_width, t.noise_level, scale, t.seed, kernel_size}).lr;
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x)
                    for (int ch = 0; ch < 3; ++ch) out.mosaic.at(t.y0 + y, t.x0 + x, ch) = t.lr.at(y, x, ch);
            out.tiles.push_back(std::move(t));
        }
    return out;
}

std::string window_manifest_json(const DegradationWindow& window, int scale) {
    nlohmann::json tiles = nlohmann::json::array();
    for (const auto& t : window.tiles)
        tiles.push_back({{"row", t.row},
                         {"col", t.col},
                         {"label", "sigma_n=" + fmt_g(t.noise_level) + " sigma_k=" + fmt_g(t.kernel_width)},
                         {"sigma_n", t.noise_level},
                         {"sigma_k", t.kernel_width},
                         {"y", t.y0},
                         {"x", t.x0},
                         {"height", t.lr.height()},
                         {"width", t.lr.width()},
                         {"seed", t.seed}});
    return nlohmann::json{{"scale", scale}, {"tiles", tiles}}.dump(2);
}

}  // namespace dmsr
