#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "syncdiff/spectral.hpp"

namespace syncdiff {

// Orientation convention used throughout: a pointwise map Pi_MN (n_M x n_N,
// row-stochastic) carries functions on N to functions on M by left
// multiplication, f_M = Pi_MN f_N. The functional map it induces,
// C_NM = Phi_M^T M_M Pi_MN Phi_N (k_M x k_N), carries N's spectral
// coefficients to M's.

/// Linear map between spectral coefficient spaces: `C * a_from ~ a_to`.
/// Shape is k_to x k_from.
struct FunctionalMap {
    Eigen::MatrixXd C;

    Index from_order() const noexcept { return C.cols(); }
    Index to_order() const noexcept { return C.rows(); }
};

/// Row-stochastic soft assignment. Row i is a distribution over the target's vertices.
struct SoftCorrespondence {
    Eigen::MatrixXd P;
    double tau = 0.0;
};

/// target_index[i] is the vertex of the target matched to source vertex i.
struct HardCorrespondence {
    std::vector<int> target_index;

    Index size() const noexcept { return static_cast<Index>(target_index.size()); }
};

/// Largest dense soft map accepted, per side.
inline constexpr Index default_soft_cap = 5000;

/// Spectral coefficients A = Phi^T M E of per-vertex functions E.
inline Eigen::MatrixXd project_descriptors(const SpectralBasis& basis, const Eigen::MatrixXd& E) {
    return basis.eigenvectors.transpose() * (basis.mass.asDiagonal() * E);
}

namespace detail {

/// Per-row factorisations of the functional map solve, kept for the adjoint.
struct FmapSystem {
    Eigen::MatrixXd C;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> rows;
};

inline FmapSystem factor_functional_map(const Eigen::MatrixXd& A_from, const Eigen::MatrixXd& A_to,
                                        const Eigen::VectorXd& ev_from, const Eigen::VectorXd& ev_to,
                                        double lambda) {
    if (A_from.cols() != A_to.cols()) throw ConfigError("descriptor counts differ between shapes");
    if (A_from.rows() != ev_from.size() || A_to.rows() != ev_to.size()) {
        throw ConfigError("eigenvalue count does not match coefficient rows");
    }
    if (!(lambda >= 0.0)) throw ConfigError("commutativity weight must be non-negative");

    const Index k_from = A_from.rows(), k_to = A_to.rows();
    const Eigen::MatrixXd gram = A_from * A_from.transpose();
    const Eigen::MatrixXd rhs = A_from * A_to.transpose();  // column i feeds row i
    const double scale = std::max(gram.diagonal().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());

    FmapSystem sys{Eigen::MatrixXd(k_to, k_from), {}};
    sys.rows.reserve(static_cast<std::size_t>(k_to));
    for (Index i = 0; i < k_to; ++i) {
        Eigen::MatrixXd system = gram;
        system.diagonal() += lambda * (ev_from.array() - ev_to(i)).square().matrix();
        Eigen::LLT<Eigen::MatrixXd> llt(system);
        bool ok = llt.info() == Eigen::Success;
        if (ok) {
            const auto d = llt.matrixLLT().diagonal().cwiseAbs();
            ok = d.minCoeff() > 1e-7 * std::sqrt(std::max(scale, system.diagonal().maxCoeff()));
        }
        if (!ok) {
            throw SolverError("functional map row " + std::to_string(i) +
                              " has a singular system; descriptors are rank-deficient "
                              "and the commutativity weight does not regularise it");
        }
        sys.C.row(i) = llt.solve(rhs.col(i)).transpose();
        sys.rows.push_back(std::move(llt));
    }
    return sys;
}

/// Pulls dL/dC back to dL/dA_from and dL/dA_to (adds into both).
inline void functional_map_adjoint(const FmapSystem& sys, const Eigen::MatrixXd& A_from,
                                   const Eigen::MatrixXd& A_to, const Eigen::MatrixXd& dC,
                                   Eigen::MatrixXd& dA_from, Eigen::MatrixXd& dA_to) {
    Eigen::MatrixXd V(sys.C.rows(), sys.C.cols());
    for (Index i = 0; i < V.rows(); ++i)
        V.row(i) = sys.rows[static_cast<std::size_t>(i)].solve(dC.row(i).transpose()).transpose();
    const Eigen::MatrixXd sym = V.transpose() * sys.C;
    dA_from.noalias() -= (sym + sym.transpose()) * A_from;
    dA_from.noalias() += V.transpose() * A_to;
    dA_to.noalias() += V * A_from;
}

} // namespace detail

/// Minimises ||C A_from - A_to||^2 + lambda ||C diag(ev_from) - diag(ev_to) C||^2
/// row by row. Throws SolverError naming the first singular row.
inline FunctionalMap solve_functional_map(const Eigen::MatrixXd& A_from, const Eigen::MatrixXd& A_to,
                                          const Eigen::VectorXd& ev_from, const Eigen::VectorXd& ev_to,
                                          double lambda) {
    return {detail::factor_functional_map(A_from, A_to, ev_from, ev_to, lambda).C};
}

/// Objective value minimised by solve_functional_map.
inline double functional_map_objective(const Eigen::MatrixXd& C, const Eigen::MatrixXd& A_from,
                                       const Eigen::MatrixXd& A_to, const Eigen::VectorXd& ev_from,
                                       const Eigen::VectorXd& ev_to, double lambda) {
    const Eigen::MatrixXd comm = C * ev_from.asDiagonal() - ev_to.asDiagonal() * C;
    return (C * A_from - A_to).squaredNorm() + lambda * comm.squaredNorm();
}

namespace detail {

inline void check_soft_size(Index rows, Index cols, Index cap) {
    if (rows > cap || cols > cap) {
        throw ConfigError("dense soft map of " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " exceeds the cap of " + std::to_string(cap));
    }
}

/// In-place row softmax with max subtraction.
inline void softmax_rows(Eigen::MatrixXd& S) {
    for (Index i = 0; i < S.rows(); ++i) {
        auto row = S.row(i);
        row.array() = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
    }
}

} // namespace detail

/// Pi = row-softmax(E_from E_to^T / tau).
inline SoftCorrespondence soft_correspondence(const Eigen::MatrixXd& E_from, const Eigen::MatrixXd& E_to,
                                              double tau, Index cap = default_soft_cap) {
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
    if (E_from.cols() != E_to.cols()) throw ConfigError("feature dimensions differ");
    if (!E_from.allFinite() || !E_to.allFinite()) throw ConfigError("features contain non-finite values");
    detail::check_soft_size(E_from.rows(), E_to.rows(), cap);
    SoftCorrespondence out{(E_from * E_to.transpose()) / tau, tau};
    detail::softmax_rows(out.P);
    return out;
}

/// Row argmax; the smallest index wins ties.
inline HardCorrespondence hard_from_soft(const Eigen::MatrixXd& P) {
    HardCorrespondence out;
    out.target_index.resize(static_cast<std::size_t>(P.rows()));
    for (Index i = 0; i < P.rows(); ++i) {
        Index best = 0;
        for (Index j = 1; j < P.cols(); ++j)
            if (P(i, j) > P(i, best)) best = j;
        out.target_index[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

inline HardCorrespondence hard_from_soft(const SoftCorrespondence& soft) { return hard_from_soft(soft.P); }

/// For each row of `queries`, the index of the nearest row of `points`
/// (Euclidean, exact; smallest index wins ties).
inline HardCorrespondence nearest_rows(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& points) {
    if (queries.cols() != points.cols()) throw ConfigError("nearest_rows: dimension mismatch");
    const Eigen::MatrixXd Pt = points.transpose();  // contiguous candidate columns
    HardCorrespondence out;
    out.target_index.resize(static_cast<std::size_t>(queries.rows()));
    Eigen::VectorXd q(queries.cols());
    for (Index i = 0; i < queries.rows(); ++i) {
        q = queries.row(i).transpose();
        Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Index j = 0; j < Pt.cols(); ++j) {
            const double d = (Pt.col(j) - q).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        out.target_index[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

/// Decodes C_NM (k_M x k_N) into a pointwise map M -> N by matching the rows
/// of Phi_M C_NM against the rows of Phi_N.
inline HardCorrespondence fmap_to_pointwise(const FunctionalMap& C_NM, const SpectralBasis& basis_M,
                                            const SpectralBasis& basis_N) {
    if (C_NM.C.rows() != basis_M.order() || C_NM.C.cols() != basis_N.order()) {
        throw ConfigError("functional map shape does not match the bases");
    }
    return nearest_rows(basis_M.eigenvectors * C_NM.C, basis_N.eigenvectors);
}

/// C_NM = Phi_M^T M_M Pi_MN Phi_N for a soft map M -> N.
inline FunctionalMap pointwise_to_fmap(const Eigen::MatrixXd& P_MN, const SpectralBasis& basis_M,
                                       const SpectralBasis& basis_N) {
    if (P_MN.rows() != basis_M.size() || P_MN.cols() != basis_N.size()) {
        throw ConfigError("soft map shape does not match the bases");
    }
    return {basis_M.eigenvectors.transpose() * (basis_M.mass.asDiagonal() * (P_MN * basis_N.eigenvectors))};
}

/// Same product for a hard map M -> N, without forming the dense matrix.
inline FunctionalMap pointwise_to_fmap(const HardCorrespondence& map_MN, const SpectralBasis& basis_M,
                                       const SpectralBasis& basis_N) {
    if (map_MN.size() != basis_M.size()) throw ConfigError("hard map length does not match the source basis");
    Eigen::MatrixXd pulled(basis_M.size(), basis_N.order());
    for (Index i = 0; i < map_MN.size(); ++i) {
        const int j = map_MN.target_index[static_cast<std::size_t>(i)];
        if (j < 0 || j >= basis_N.size()) throw ConfigError("hard map index out of range");
        pulled.row(i) = basis_N.eigenvectors.row(j);
    }
    return {basis_M.eigenvectors.transpose() * (basis_M.mass.asDiagonal() * pulled)};
}

/// Mean Shannon entropy (nats) of the rows of a stochastic matrix.
inline double mean_row_entropy(const Eigen::MatrixXd& P) {
    double total = 0.0;
    for (Index i = 0; i < P.rows(); ++i)
        for (Index j = 0; j < P.cols(); ++j)
            if (P(i, j) > 0.0) total -= P(i, j) * std::log(P(i, j));
    return P.rows() ? total / static_cast<double>(P.rows()) : 0.0;
}

// --- files -------------------------------------------------------------------

/// One 0-based target index per line.
inline void write_hard_correspondence(const HardCorrespondence& map, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    for (int j : map.target_index) out << j << '\n';
}

/// Reads the one-index-per-line format; `target_size` (if positive) bounds the indices.
inline HardCorrespondence read_hard_correspondence(const std::filesystem::path& path, Index target_size = -1) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'", 0, 0);
    HardCorrespondence out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        long long value = 0;
        const char* b = line.data() + first;
        const char* e = line.data() + last + 1;
        const auto [ptr, ec] = std::from_chars(b, e, value);
        if (ec != std::errc() || ptr != e || value < 0 ||
            (target_size > 0 && value >= target_size)) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad target index '" +
                                 line.substr(first, last - first + 1) + "'",
                             line_no, 0);
        }
        out.target_index.push_back(static_cast<int>(value));
    }
    return out;
}

/// Debug export: rows, cols as int64 then row-major doubles, little-endian host order.
inline void write_soft_correspondence(const SoftCorrespondence& soft, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    const std::int64_t dims[2] = {soft.P.rows(), soft.P.cols()};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = soft.P;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
}

} // namespace syncdiff
