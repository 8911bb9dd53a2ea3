#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "syncdiff/mesh.hpp"

namespace syncdiff {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Cotangent stiffness matrix and barycentric lumped mass of one mesh.
struct Operators {
    SparseMatrix stiffness;
    Eigen::VectorXd mass;

    Index size() const noexcept { return mass.size(); }
};

/// Cotangent Laplacian: w_ij = 1/2 sum of cotangents of the angles opposite
/// edge ij, L_ij = -w_ij, L_ii = sum_j w_ij. Mass is 1/3 of incident areas.
inline Operators build_operators(const TriangleMesh& mesh) {
    const Index n = mesh.num_vertices();
    const auto& F = mesh.faces();
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(F.rows()) * 12);
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);

    for (Index f = 0; f < F.rows(); ++f) {
        const int idx[3] = {F(f, 0), F(f, 1), F(f, 2)};
        const Eigen::Vector3d p[3] = {mesh.vertex(idx[0]), mesh.vertex(idx[1]), mesh.vertex(idx[2])};
        const double double_area = (p[1] - p[0]).cross(p[2] - p[0]).norm();
        if (!(double_area > 0.0)) {
            throw MeshError("face " + std::to_string(f) + " is degenerate; run validate_mesh first");
        }
        for (int c = 0; c < 3; ++c) {
            // Angle at corner c is opposite the edge (c+1, c+2).
            const int i = idx[(c + 1) % 3], j = idx[(c + 2) % 3];
            const Eigen::Vector3d u = p[(c + 1) % 3] - p[c];
            const Eigen::Vector3d v = p[(c + 2) % 3] - p[c];
            const double half_cot = 0.5 * u.dot(v) / double_area;
            triplets.emplace_back(i, j, -half_cot);
            triplets.emplace_back(j, i, -half_cot);
            triplets.emplace_back(i, i, half_cot);
            triplets.emplace_back(j, j, half_cot);
            mass(idx[c]) += double_area / 6.0;
        }
    }
    Operators ops;
    ops.stiffness.resize(n, n);
    ops.stiffness.setFromTriplets(triplets.begin(), triplets.end());
    ops.stiffness.makeCompressed();
    ops.mass = std::move(mass);
    return ops;
}

/// First k generalised eigenpairs of L phi = lambda M phi, M-orthonormal.
struct SpectralBasis {
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
    Eigen::VectorXd mass;
    /// Relative residual ||L phi - lambda M phi|| / (||L||_inf ||phi||) per column.
    Eigen::VectorXd residuals;

    Index size() const noexcept { return eigenvectors.rows(); }
    Index order() const noexcept { return eigenvectors.cols(); }
};

enum class EigenMethod { automatic, dense, krylov };

struct EigenOptions {
    EigenMethod method = EigenMethod::automatic;
    int block_size = 8;
    double tolerance = 1e-10;
    std::uint64_t seed = 0x5eedULL;
    /// Largest n for which the dense fallback is attempted.
    Index dense_limit = 2000;
};

namespace detail {

inline double inf_norm(const SparseMatrix& A) {
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(A.rows());
    for (Index c = 0; c < A.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(A, c); it; ++it) rows(it.row()) += std::abs(it.value());
    return rows.maxCoeff();
}

inline Eigen::VectorXd eigen_residuals(const Operators& ops, const Eigen::VectorXd& values,
                                       const Eigen::MatrixXd& vectors) {
    const double scale = std::max(inf_norm(ops.stiffness), 1e-300);
    const Eigen::MatrixXd LPhi = ops.stiffness * vectors;
    Eigen::VectorXd res(values.size());
    for (Index j = 0; j < values.size(); ++j) {
        const Eigen::VectorXd r = LPhi.col(j) - values(j) * ops.mass.cwiseProduct(vectors.col(j));
        res(j) = r.norm() / (scale * vectors.col(j).norm());
    }
    return res;
}

inline void fix_signs(Eigen::MatrixXd& vectors) {
    for (Index j = 0; j < vectors.cols(); ++j) {
        const double peak = vectors.col(j).cwiseAbs().maxCoeff();
        for (Index i = 0; i < vectors.rows(); ++i) {
            if (std::abs(vectors(i, j)) > 1e-8 * peak) {
                if (vectors(i, j) < 0) vectors.col(j) = -vectors.col(j);
                break;
            }
        }
    }
}

inline SpectralBasis dense_eigensolve(const Operators& ops, Index k) {
    const Eigen::VectorXd inv_sqrt_mass = ops.mass.cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd A = Eigen::MatrixXd(ops.stiffness);
    A = inv_sqrt_mass.asDiagonal() * A * inv_sqrt_mass.asDiagonal();
    A = 0.5 * (A + A.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(A);
    if (solver.info() != Eigen::Success) throw SolverError("dense eigensolver failed to converge");
    SpectralBasis basis;
    basis.eigenvalues = solver.eigenvalues().head(k);
    basis.eigenvectors = inv_sqrt_mass.asDiagonal() * solver.eigenvectors().leftCols(k);
    basis.mass = ops.mass;
    return basis;
}

/// M-orthonormalises the columns of X against the basis Q[:, :filled] and
/// within itself (two passes of classical Gram-Schmidt). Columns that vanish
/// are replaced from `rng`. Returns the number of replaced columns.
inline int m_orthonormalize(Eigen::MatrixXd& X, const Eigen::MatrixXd& Q, Index filled,
                            const Eigen::VectorXd& mass, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    int replaced = 0;
    for (Index j = 0; j < X.cols(); ++j) {
        const double original = std::sqrt(X.col(j).dot(mass.cwiseProduct(X.col(j))));
        for (int attempt = 0; attempt < 5; ++attempt) {
            for (int pass = 0; pass < 2; ++pass) {
                if (filled > 0) {
                    const Eigen::VectorXd coef = Q.leftCols(filled).transpose() * mass.cwiseProduct(X.col(j));
                    X.col(j) -= Q.leftCols(filled) * coef;
                }
                if (j > 0) {
                    const Eigen::VectorXd coef = X.leftCols(j).transpose() * mass.cwiseProduct(X.col(j));
                    X.col(j) -= X.leftCols(j) * coef;
                }
            }
            const double norm = std::sqrt(X.col(j).dot(mass.cwiseProduct(X.col(j))));
            if (norm > 1e-10 * std::max(original, 1e-300)) {
                X.col(j) /= norm;
                break;
            }
            ++replaced;
            for (Index i = 0; i < X.rows(); ++i) X(i, j) = normal(rng);
        }
    }
    return replaced;
}

/// Block shift-invert Krylov with full reorthogonalisation and Rayleigh-Ritz
/// extraction. Returns an empty basis when the iteration budget is exhausted.
inline SpectralBasis krylov_eigensolve(const Operators& ops, Index k, const EigenOptions& opt,
                                       Eigen::VectorXd* last_residuals) {
    const Index n = ops.size();
    const Index b = std::max<Index>(1, std::min<Index>(opt.block_size, n));
    const double shift = -1e-3 * Eigen::VectorXd(ops.stiffness.diagonal()).sum() / ops.mass.sum();

    SparseMatrix K = ops.stiffness;
    for (Index i = 0; i < n; ++i) K.coeffRef(i, i) -= shift * ops.mass(i);
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(K);
    if (ldlt.info() != Eigen::Success) throw SolverError("shift-invert factorisation failed");

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> normal;
    const Index max_basis = std::min(n, 6 * k + 10 * b + 100);
    Eigen::MatrixXd Q(n, max_basis), AQ(n, max_basis);
    Eigen::MatrixXd block(n, b);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < b; ++j) block(i, j) = normal(rng);
    m_orthonormalize(block, Q, 0, ops.mass, rng);

    Index filled = 0;
    Index next_check = std::min(max_basis, 2 * k + 2 * b);
    Eigen::VectorXd residuals;
    while (filled < max_basis) {
        const Index take = std::min(b, max_basis - filled);
        Q.middleCols(filled, take) = block.leftCols(take);
        AQ.middleCols(filled, take) = ldlt.solve(ops.mass.asDiagonal() * block.leftCols(take));
        filled += take;
        if (filled >= next_check || filled == max_basis) {
            Eigen::MatrixXd H = Q.leftCols(filled).transpose() * ops.mass.asDiagonal() * AQ.leftCols(filled);
            H = 0.5 * (H + H.transpose()).eval();
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> small(H);
            // Largest Ritz values of the inverted operator are the smallest eigenvalues.
            const Index take_k = std::min(k, filled);
            Eigen::VectorXd values(take_k);
            Eigen::MatrixXd Y(filled, take_k);
            for (Index j = 0; j < take_k; ++j) {
                const Index src = filled - 1 - j;
                values(j) = shift + 1.0 / small.eigenvalues()(src);
                Y.col(j) = small.eigenvectors().col(src);
            }
            if (take_k == k) {
                Eigen::MatrixXd vectors = Q.leftCols(filled) * Y;
                residuals = eigen_residuals(ops, values, vectors);
                if (residuals.maxCoeff() <= opt.tolerance) {
                    SpectralBasis basis;
                    basis.eigenvalues = values;
                    basis.eigenvectors = std::move(vectors);
                    basis.mass = ops.mass;
                    return basis;
                }
            }
            next_check = std::min(max_basis, filled + std::max<Index>(4 * b, k / 4));
        }
        if (filled >= max_basis) break;
        block = AQ.middleCols(filled - take, take);
        if (take < b) break;
        m_orthonormalize(block, Q, filled, ops.mass, rng);
    }
    if (last_residuals) *last_residuals = residuals;
    return {};
}

} // namespace detail

/// First k eigenpairs, ascending, with deterministic signs (first entry of
/// significant magnitude is positive). The dense path handles small meshes and
/// acts as the fallback when the Krylov iteration does not converge.
inline SpectralBasis eigendecompose(const Operators& ops, Index k, const EigenOptions& opt = {}) {
    const Index n = ops.size();
    if (k < 1 || k > n) {
        throw SolverError("eigendecompose: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
    }
    bool dense = opt.method == EigenMethod::dense;
    if (opt.method == EigenMethod::automatic) dense = 4 * k + 64 >= n;

    SpectralBasis basis;
    if (!dense) {
        Eigen::VectorXd residuals;
        basis = detail::krylov_eigensolve(ops, k, opt, &residuals);
        if (basis.order() == 0) {
            if (n > opt.dense_limit || opt.method == EigenMethod::krylov) {
                std::string msg = "shift-invert eigensolver did not converge; max residual " +
                                  std::to_string(residuals.size() ? residuals.maxCoeff() : -1.0);
                throw SolverError(msg);
            }
            dense = true;
        }
    }
    if (dense) {
        if (n > opt.dense_limit && opt.method != EigenMethod::dense) {
            throw SolverError("dense eigensolve refused for n=" + std::to_string(n));
        }
        basis = detail::dense_eigensolve(ops, k);
    }
    for (Index j = 0; j < basis.eigenvalues.size(); ++j) basis.eigenvalues(j) = std::max(0.0, basis.eigenvalues(j));
    detail::fix_signs(basis.eigenvectors);
    basis.residuals = detail::eigen_residuals(ops, basis.eigenvalues, basis.eigenvectors);
    return basis;
}

/// Backward Euler heat step (M + tL)^{-1} M u. t = 0 returns u unchanged.
inline Eigen::MatrixXd diffuse_implicit(const Operators& ops, const Eigen::MatrixXd& u, double t) {
    if (t < 0) throw ConfigError("diffusion time must be non-negative");
    if (u.rows() != ops.size()) throw ConfigError("diffuse_implicit: field has wrong row count");
    if (t == 0.0) return u;
    SparseMatrix K = t * ops.stiffness;
    for (Index i = 0; i < ops.size(); ++i) K.coeffRef(i, i) += ops.mass(i);
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(K);
    if (ldlt.info() != Eigen::Success) throw SolverError("backward Euler system is singular");
    Eigen::MatrixXd out = ldlt.solve(ops.mass.asDiagonal() * u);
    if (ldlt.info() != Eigen::Success) throw SolverError("backward Euler solve failed");
    return out;
}

/// How spectral coefficients are obtained from a vertex field.
enum class Projection {
    mass_weighted, ///< Phi^T M u, the M-orthogonal projector
    literal,       ///< Phi^T u as written in the plain spectral formula
};

inline Eigen::MatrixXd spectral_coefficients(const SpectralBasis& basis, const Eigen::MatrixXd& u,
                                             Projection projection = Projection::mass_weighted) {
    if (u.rows() != basis.size()) throw ConfigError("spectral projection: field has wrong row count");
    if (projection == Projection::mass_weighted) return basis.eigenvectors.transpose() * basis.mass.asDiagonal() * u;
    return basis.eigenvectors.transpose() * u;
}

/// Phi exp(-t Lambda) Phi^T M u.
inline Eigen::MatrixXd diffuse_spectral(const SpectralBasis& basis, const Eigen::MatrixXd& u, double t,
                                        Projection projection = Projection::mass_weighted) {
    if (t < 0) throw ConfigError("diffusion time must be non-negative");
    const Eigen::VectorXd decay = (-t * basis.eigenvalues.array()).exp().matrix();
    return basis.eigenvectors * (decay.asDiagonal() * spectral_coefficients(basis, u, projection));
}

/// Spectral diffusion where column j of u diffuses for times(j).
inline Eigen::MatrixXd diffuse_spectral_columns(const SpectralBasis& basis, const Eigen::MatrixXd& u,
                                                const Eigen::VectorXd& times,
                                                Projection projection = Projection::mass_weighted) {
    if (times.size() != u.cols()) throw ConfigError("one diffusion time per column required");
    Eigen::MatrixXd coef = spectral_coefficients(basis, u, projection);
    for (Index j = 0; j < coef.cols(); ++j) {
        if (times(j) < 0) throw ConfigError("diffusion time must be non-negative");
        coef.col(j).array() *= (-times(j) * basis.eigenvalues.array()).exp();
    }
    return basis.eigenvectors * coef;
}

inline constexpr Index default_dense_cap = 5000;

/// Dense heat kernel Phi exp(-t Lambda) Phi^T.
inline Eigen::MatrixXd heat_kernel(const SpectralBasis& basis, double t, Index cap = default_dense_cap) {
    if (basis.size() > cap) {
        throw ConfigError("heat_kernel: n=" + std::to_string(basis.size()) + " exceeds dense cap " +
                          std::to_string(cap));
    }
    if (t < 0) throw ConfigError("diffusion time must be non-negative");
    const Eigen::VectorXd decay = (-t * basis.eigenvalues.array()).exp().matrix();
    Eigen::MatrixXd D = basis.eigenvectors * decay.asDiagonal() * basis.eigenvectors.transpose();
    return D;
}

} // namespace syncdiff
