#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <Eigen/Core>

#include "syncdiff/spectral.hpp"

namespace syncdiff {

enum class DescriptorKind { hks, wks, xyz };

inline const char* to_string(DescriptorKind kind) {
    switch (kind) {
    case DescriptorKind::hks: return "hks";
    case DescriptorKind::wks: return "wks";
    case DescriptorKind::xyz: return "xyz";
    }
    return "unknown";
}

/// Per-vertex descriptors, one row per vertex.
struct DescriptorMatrix {
    Eigen::MatrixXd values;
    DescriptorKind kind = DescriptorKind::wks;

    Index dim() const noexcept { return values.cols(); }
};

namespace detail {

/// Number of leading eigenvalues treated as zero modes.
inline Index count_zero_modes(const Eigen::VectorXd& eigenvalues) {
    const double scale = std::max(1.0, eigenvalues.cwiseAbs().maxCoeff());
    Index zeros = 0;
    while (zeros < eigenvalues.size() && eigenvalues(zeros) <= 1e-9 * scale) ++zeros;
    return zeros;
}

inline Eigen::VectorXd spaced(double lo, double hi, Index count, bool logarithmic) {
    Eigen::VectorXd out(count);
    if (count == 1) {
        out(0) = logarithmic ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
        return out;
    }
    for (Index i = 0; i < count; ++i) {
        const double s = static_cast<double>(i) / static_cast<double>(count - 1);
        out(i) = logarithmic ? std::exp(std::log(lo) + s * (std::log(hi) - std::log(lo))) : lo + s * (hi - lo);
    }
    return out;
}

} // namespace detail

/// HKS(x, t) = sum_i exp(-lambda_i t) phi_i(x)^2 at arbitrary times.
inline Eigen::MatrixXd hks_at_times(const SpectralBasis& basis, const Eigen::VectorXd& times) {
    const Eigen::MatrixXd squared = basis.eigenvectors.array().square().matrix();
    Eigen::MatrixXd weights(basis.order(), times.size());
    for (Index j = 0; j < times.size(); ++j) weights.col(j) = (-times(j) * basis.eigenvalues.array()).exp().matrix();
    return squared * weights;
}

/// Heat kernel signature at d log-spaced times over [4 ln 10 / lambda_k, 4 ln 10 / lambda_2].
inline DescriptorMatrix compute_hks(const SpectralBasis& basis, Index d) {
    if (d < 1) throw ConfigError("HKS dimension must be positive");
    const Index zeros = detail::count_zero_modes(basis.eigenvalues);
    if (basis.order() < 2 || zeros >= basis.order()) {
        throw ConfigError("HKS needs at least one nonzero eigenvalue (k >= 2)");
    }
    const double ln10x4 = 4.0 * std::log(10.0);
    const double t_min = ln10x4 / basis.eigenvalues(basis.order() - 1);
    const double t_max = ln10x4 / basis.eigenvalues(zeros);
    return {hks_at_times(basis, detail::spaced(t_min, t_max, d, true)), DescriptorKind::hks};
}

/// Wave kernel signature with d energies; columns are L2-normalised over vertices.
inline DescriptorMatrix compute_wks(const SpectralBasis& basis, Index d) {
    if (d < 1) throw ConfigError("WKS dimension must be positive");
    if (basis.order() < 3) throw ConfigError("WKS needs k >= 3");
    const Index zeros = detail::count_zero_modes(basis.eigenvalues);
    if (zeros > 1) {
        throw MeshError("spectrum has " + std::to_string(zeros) +
                        " zero eigenvalues; the mesh is disconnected");
    }
    const Index m = basis.order() - zeros;
    const Eigen::ArrayXd log_lambda = basis.eigenvalues.tail(m).array().log();
    const double lo = log_lambda(0), hi = log_lambda(m - 1);
    const double sigma = std::max(7.0 * (hi - lo) / static_cast<double>(d), 1e-12);
    double e_lo = lo + 2.0 * sigma, e_hi = hi - 2.0 * sigma;
    if (e_lo > e_hi) e_lo = e_hi = 0.5 * (lo + hi);
    const Eigen::VectorXd energies = detail::spaced(e_lo, e_hi, d, false);

    Eigen::MatrixXd weights(m, d);
    for (Index j = 0; j < d; ++j) {
        weights.col(j) = (-(energies(j) - log_lambda).square() / (2.0 * sigma * sigma)).exp().matrix();
        weights.col(j) /= weights.col(j).sum();
    }
    Eigen::MatrixXd values = basis.eigenvectors.rightCols(m).array().square().matrix() * weights;
    for (Index j = 0; j < d; ++j) {
        const double norm = values.col(j).norm();
        if (norm > 0) values.col(j) /= norm;
    }
    return {std::move(values), DescriptorKind::wks};
}

/// Raw vertex positions as a 3-dimensional descriptor.
inline DescriptorMatrix xyz_descriptor(const TriangleMesh& mesh) {
    return {Eigen::MatrixXd(mesh.vertices()), DescriptorKind::xyz};
}

/// Column-wise standardisation with one mean and scale shared by both shapes,
/// so corresponding rows stay comparable. Constant columns are only centred.
inline void standardise_jointly(Eigen::MatrixXd& A, Eigen::MatrixXd& B) {
    if (A.cols() != B.cols()) throw ConfigError("descriptor widths differ");
    const double n = static_cast<double>(A.rows() + B.rows());
    if (n == 0.0) return;
    for (Index c = 0; c < A.cols(); ++c) {
        const double mean = (A.col(c).sum() + B.col(c).sum()) / n;
        A.col(c).array() -= mean;
        B.col(c).array() -= mean;
        const double sd = std::sqrt((A.col(c).squaredNorm() + B.col(c).squaredNorm()) / n);
        if (sd > 1e-300) {
            A.col(c) /= sd;
            B.col(c) /= sd;
        }
    }
}

/// CSV export: n rows, d columns, no header.
inline void write_descriptor_csv(const DescriptorMatrix& desc, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    char buf[32];
    for (Index i = 0; i < desc.values.rows(); ++i) {
        for (Index j = 0; j < desc.values.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", desc.values(i, j));
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
}

} // namespace syncdiff
