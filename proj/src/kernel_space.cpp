#include "dmsr/kernel_space.hpp"

#include <iostream>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

namespace dmsr {

double PcaProjection::explained_fraction() const {
    double total = 0.0, kept = 0.0;
    for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
        const double v = std::max(eigenvalues[i], 0.0);
        total += v;
        if (static_cast<int>(i) < embed_dim) kept += v;
    }
    return total > 0.0 ? kept / total : 0.0;
}

KernelPool build_kernel_pool(int n, double width_lo, double width_hi, std::uint64_t seed, int kernel_size,
                             int embed_dim) {
    if (n < embed_dim) throw std::invalid_argument("build_kernel_pool: pool smaller than embedding dimension");
    if (!(width_lo > 0.0) || width_hi < width_lo) throw std::invalid_argument("build_kernel_pool: bad width range");
    KernelPool pool;
    pool.count = n;
    pool.dim = kernel_size * kernel_size;
    pool.kernels.reserve(static_cast<std::size_t>(n) * pool.dim);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> width(width_lo, width_hi);
    for (int i = 0; i < n; ++i) {
        const double w = width_hi > width_lo ? width(rng) : width_lo;
        const auto k = gaussian_kernel(w, kernel_size);
        pool.kernels.insert(pool.kernels.end(), k.weights.begin(), k.weights.end());
    }
    return pool;
}

PcaProjection compute_pca(const KernelPool& pool, int dim) {
    if (dim < 1 || dim > pool.dim) throw std::invalid_argument("compute_pca: dim out of range");
    if (pool.count < dim) throw std::invalid_argument("compute_pca: pool smaller than dim");
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> data(pool.kernels.data(), pool.count, pool.dim);
    const Eigen::MatrixXd moment = (data.transpose() * data) / static_cast<double>(pool.count);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(moment);
    if (solver.info() != Eigen::Success) throw std::runtime_error("compute_pca: eigen decomposition failed");

    PcaProjection pca;
    pca.embed_dim = dim;
    pca.input_dim = pool.dim;
    pca.matrix.assign(static_cast<std::size_t>(dim) * pool.dim, 0.0);
    const auto& values = solver.eigenvalues();  // ascending
    const auto& vectors = solver.eigenvectors();
    for (int i = pool.dim - 1; i >= 0; --i) pca.eigenvalues.push_back(values(i));

    const double tol = std::max(values(pool.dim - 1), 0.0) * 1e-12 * pool.dim;
    for (int r = 0; r < dim; ++r) {
        const int col = pool.dim - 1 - r;
        if (values(col) <= tol) ++pca.rank_padded;
        // Eigenvectors of a symmetric matrix are orthonormal even in the null space, so the
        // solver's basis doubles as the orthonormal completion when the pool is rank deficient.
        Eigen::VectorXd v = vectors.col(col);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        for (int j = 0; j < pool.dim; ++j) pca.matrix[static_cast<std::size_t>(r) * pool.dim + j] = v(j);
    }
    if (pca.rank_padded > 0)
        std::cerr << "compute_pca: kernel pool has rank " << dim - pca.rank_padded << " < " << dim << "; padded "
                  << pca.rank_padded << " direction(s) by orthonormal completion\n";
    return pca;
}

std::vector<double> project(const std::vector<double>& flat, const PcaProjection& pca) {
    if (static_cast<int>(flat.size()) != pca.input_dim) throw std::invalid_argument("project: dimension mismatch");
    std::vector<double> code(pca.embed_dim, 0.0);
    for (int r = 0; r < pca.embed_dim; ++r) {
        const double* p = pca.row(r);
        double acc = 0.0;
        for (int j = 0; j < pca.input_dim; ++j) acc += p[j] * flat[j];
        code[r] = acc;
    }
    return code;
}

std::vector<double> project(const BlurKernel& kernel, const PcaProjection& pca) { return project(kernel.weights, pca); }

std::vector<double> reconstruct(const std::vector<double>& code, const PcaProjection& pca) {
    if (static_cast<int>(code.size()) != pca.embed_dim) throw std::invalid_argument("reconstruct: dimension mismatch");
    std::vector<double> flat(pca.input_dim, 0.0);
    for (int r = 0; r < pca.embed_dim; ++r) {
        const double* p = pca.row(r);
        for (int j = 0; j < pca.input_dim; ++j) flat[j] += p[j] * code[r];
    }
    return flat;
}

void write_pca(const std::filesystem::path& path, const PcaProjection& pca) {
    Blob blob;
    blob.dims = {static_cast<std::uint32_t>(pca.embed_dim), static_cast<std::uint32_t>(pca.input_dim)};
    blob.values.assign(pca.matrix.begin(), pca.matrix.end());
    write_blob(path, blob);
}

PcaProjection read_pca(const std::filesystem::path& path) {
    const Blob blob = read_blob(path);
    if (blob.dims.size() != 2) throw std::runtime_error("read_pca: expected a 2-D container");
    PcaProjection pca;
    pca.embed_dim = static_cast<int>(blob.dims[0]);
    pca.input_dim = static_cast<int>(blob.dims[1]);
    pca.matrix.assign(blob.values.begin(), blob.values.end());
    return pca;
}

}  // namespace dmsr
