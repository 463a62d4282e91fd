#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dmsr/degradation.hpp"

namespace dmsr {

// count x dim matrix of flattened kernels, row-major.
struct KernelPool {
    int count = 0;
    int dim = 0;
    std::vector<double> kernels;

    const double* row(int i) const { return kernels.data() + static_cast<std::size_t>(i) * dim; }
};

// embed_dim x input_dim, rows are principal directions (descending eigenvalue).
struct PcaProjection {
    int embed_dim = 0;
    int input_dim = 0;
    std::vector<double> matrix;
    std::vector<double> eigenvalues;  // all input_dim eigenvalues of the second-moment matrix, non-increasing
    int rank_padded = 0;              // rows filled by orthonormal completion

    const double* row(int i) const { return matrix.data() + static_cast<std::size_t>(i) * input_dim; }
    // Fraction of the pool's second moment captured by the retained directions.
    double explained_fraction() const;
};

KernelPool build_kernel_pool(int n, double width_lo, double width_hi, std::uint64_t seed, int kernel_size = 15,
                             int embed_dim = 15);

// Top `dim` eigenvectors of the uncentered second moment pool^T pool / count. The largest-magnitude
// entry of every row is made positive.
PcaProjection compute_pca(const KernelPool& pool, int dim = 15);

std::vector<double> project(const BlurKernel& kernel, const PcaProjection& pca);
std::vector<double> project(const std::vector<double>& flat, const PcaProjection& pca);
// P^T * code
std::vector<double> reconstruct(const std::vector<double>& code, const PcaProjection& pca);

void write_pca(const std::filesystem::path& path, const PcaProjection& pca);
PcaProjection read_pca(const std::filesystem::path& path);

}  // namespace dmsr
