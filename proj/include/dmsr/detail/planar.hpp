#pragma once

// Planar (single channel, row-major) numeric kernels shared by the degradation pipeline and the
// differentiable graph ops. Keeping one implementation makes the simulated degradation inside the
// consistency loss bit-identical to the data pipeline for equal inputs.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace dmsr::detail {

// Mirror without edge repetition: -1 -> 1, n -> n-2.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

// out[y][x] = sum_{i,j} k[i][j] * in[reflect(y+i-r)][reflect(x+j-r)]
template <typename T>
void correlate_reflect(std::span<const T> in, int h, int w, std::span<const T> k, int ks, std::span<T> out) {
    const int r = ks / 2;
    std::vector<int> xi(static_cast<std::size_t>(w) + 2 * r);
    for (int x = -r; x < w + r; ++x) xi[x + r] = reflect_index(x, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            T acc = T(0);
            for (int i = 0; i < ks; ++i) {
                const T* row = in.data() + static_cast<std::size_t>(reflect_index(y + i - r, h)) * w;
                const T* krow = k.data() + static_cast<std::size_t>(i) * ks;
                for (int j = 0; j < ks; ++j) acc += krow[j] * row[xi[x + j]];
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
}

// Accumulates gradients of correlate_reflect into grad_in / grad_k (either may be empty).
template <typename T>
void correlate_reflect_backward(std::span<const T> in, int h, int w, std::span<const T> k, int ks,
                                std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_k) {
    const int r = ks / 2;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const T g = grad_out[static_cast<std::size_t>(y) * w + x];
            if (g == T(0)) continue;
            for (int i = 0; i < ks; ++i) {
                const std::size_t row = static_cast<std::size_t>(reflect_index(y + i - r, h)) * w;
                for (int j = 0; j < ks; ++j) {
                    const std::size_t src = row + reflect_index(x + j - r, w);
                    if (!grad_k.empty()) grad_k[static_cast<std::size_t>(i) * ks + j] += g * in[src];
                    if (!grad_in.empty()) grad_in[src] += g * k[static_cast<std::size_t>(i) * ks + j];
                }
            }
        }
    }
}

// Keys cubic convolution kernel.
inline double cubic_weight(double x, double a = -0.5) {
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

// Per-axis resampling taps. For output index o the contributing inputs are
// first[o] .. first[o] + count[o] - 1 with weights starting at offset[o].
struct AxisTaps {
    int in_size = 0;
    int out_size = 0;
    std::vector<int> first;
    std::vector<int> count;
    std::vector<int> offset;
    std::vector<double> weights;
};

// Antialiased cubic resampling along one axis (MATLAB-style pixel centers). When shrinking the
// kernel is widened by the ratio; taps falling outside the axis are dropped and the remaining
// weights renormalized to sum 1.
inline AxisTaps cubic_axis_taps(int in_size, int out_size) {
    if (in_size < 1 || out_size < 1) throw std::invalid_argument("cubic_axis_taps: sizes must be positive");
    AxisTaps taps;
    taps.in_size = in_size;
    taps.out_size = out_size;
    const double ratio = static_cast<double>(in_size) / out_size;
    const double stretch = ratio > 1.0 ? ratio : 1.0;
    const double support = 2.0 * stretch;
    for (int o = 0; o < out_size; ++o) {
        const double center = (o + 0.5) * ratio - 0.5;
        int lo = static_cast<int>(std::floor(center - support));
        int hi = static_cast<int>(std::ceil(center + support));
        if (lo < 0) lo = 0;
        if (hi > in_size - 1) hi = in_size - 1;
        std::vector<double> w;
        double total = 0.0;
        int first = -1;
        for (int j = lo; j <= hi; ++j) {
            const double v = cubic_weight((center - j) / stretch) / stretch;
            if (v == 0.0 && first < 0) continue;
            if (first < 0) first = j;
            w.push_back(v);
            total += v;
        }
        while (!w.empty() && w.back() == 0.0) w.pop_back();
        if (w.empty() || total == 0.0) throw std::logic_error("cubic_axis_taps: empty support");
        taps.first.push_back(first);
        taps.count.push_back(static_cast<int>(w.size()));
        taps.offset.push_back(static_cast<int>(taps.weights.size()));
        for (double v : w) taps.weights.push_back(v / total);
    }
    return taps;
}

// Separable resampling: horizontal pass then vertical pass.
template <typename T>
void resample_plane(std::span<const T> in, const AxisTaps& ty, const AxisTaps& tx, std::span<T> out) {
    const int h = ty.in_size, w = tx.in_size, oh = ty.out_size, ow = tx.out_size;
    std::vector<T> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        const T* row = in.data() + static_cast<std::size_t>(y) * w;
        for (int o = 0; o < ow; ++o) {
            T acc = T(0);
            const double* wt = tx.weights.data() + tx.offset[o];
            for (int t = 0; t < tx.count[o]; ++t) acc += static_cast<T>(wt[t]) * row[tx.first[o] + t];
            tmp[static_cast<std::size_t>(y) * ow + o] = acc;
        }
    }
    for (int o = 0; o < oh; ++o) {
        T* orow = out.data() + static_cast<std::size_t>(o) * ow;
        for (int x = 0; x < ow; ++x) orow[x] = T(0);
        const double* wt = ty.weights.data() + ty.offset[o];
        for (int t = 0; t < ty.count[o]; ++t) {
            const T wv = static_cast<T>(wt[t]);
            const T* trow = tmp.data() + static_cast<std::size_t>(ty.first[o] + t) * ow;
            for (int x = 0; x < ow; ++x) orow[x] += wv * trow[x];
        }
    }
}

template <typename T>
void resample_plane_backward(std::span<const T> grad_out, const AxisTaps& ty, const AxisTaps& tx, std::span<T> grad_in) {
    const int h = ty.in_size, w = tx.in_size, oh = ty.out_size, ow = tx.out_size;
    std::vector<T> gtmp(static_cast<std::size_t>(h) * ow, T(0));
    for (int o = 0; o < oh; ++o) {
        const T* grow = grad_out.data() + static_cast<std::size_t>(o) * ow;
        const double* wt = ty.weights.data() + ty.offset[o];
        for (int t = 0; t < ty.count[o]; ++t) {
            const T wv = static_cast<T>(wt[t]);
            T* trow = gtmp.data() + static_cast<std::size_t>(ty.first[o] + t) * ow;
            for (int x = 0; x < ow; ++x) trow[x] += wv * grow[x];
        }
    }
    for (int y = 0; y < h; ++y) {
        T* row = grad_in.data() + static_cast<std::size_t>(y) * w;
        for (int o = 0; o < ow; ++o) {
            const T g = gtmp[static_cast<std::size_t>(y) * ow + o];
            const double* wt = tx.weights.data() + tx.offset[o];
            for (int t = 0; t < tx.count[o]; ++t) row[tx.first[o] + t] += static_cast<T>(wt[t]) * g;
        }
    }
}

}  // namespace dmsr::detail
