#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "syncdiff/correspondence.hpp"
#include "syncdiff/shape.hpp"

namespace syncdiff {

/// h probe functions on a shape (one per column) with a diffusion time each.
struct RandomFunctionSet {
    Eigen::MatrixXd F;
    Eigen::VectorXd times;
    std::uint64_t seed = 0;
    double T = 0.0;

    Index width() const noexcept { return F.cols(); }
};

/// Gaussian entries with each row scaled to unit norm (every vertex starts
/// with the same amount of heat); times uniform on [0, T].
inline RandomFunctionSet sample_random_functions(Index n, Index h, double T, std::uint64_t seed) {
    if (h < 1) throw ConfigError("sketch width h must be at least 1");
    if (!(T >= 0.0)) throw ConfigError("maximum diffusion time must be non-negative");
    RandomFunctionSet set{Eigen::MatrixXd(n, h), Eigen::VectorXd(h), seed, T};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < h; ++j) set.F(i, j) = normal(rng);
        set.F.row(i) /= set.F.row(i).norm();
    }
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (Index j = 0; j < h; ++j) set.times(j) = T * uniform(rng);
    return set;
}

/// Same functions, every column diffused for `t`.
inline RandomFunctionSet with_fixed_time(RandomFunctionSet set, double t) {
    if (!(t >= 0.0)) throw ConfigError("fixed diffusion time must be non-negative");
    set.times.setConstant(t);
    return set;
}

/// The first min(h, k) eigenfunctions as predefined probe functions.
inline RandomFunctionSet eigenfunction_set(const SpectralBasis& basis, Index h, const Eigen::VectorXd& times) {
    const Index w = std::min(h, basis.order());
    return {basis.eigenvectors.leftCols(w), times.head(w), 0, times.size() ? times.maxCoeff() : 0.0};
}

/// Which smoothness term fills the regulariser slot of the total loss.
enum class Regulariser { none, sync_diffusion, kernel, dirichlet, cycle };

inline const char* to_string(Regulariser r) {
    switch (r) {
    case Regulariser::none: return "none";
    case Regulariser::sync_diffusion: return "sync_diffusion";
    case Regulariser::kernel: return "kernel";
    case Regulariser::dirichlet: return "dirichlet";
    case Regulariser::cycle: return "cycle";
    }
    return "unknown";
}

struct EnergyConfig {
    Index h = 128;
    double T = 1e-2;
    double tau = 0.07;
    double lambda_couple = 1.0;
    double lambda_struct = 1.0;
    double lambda_bij = 1.0;
    double lambda_orth = 1.0;
    double fmap_lambda = 1e-3; ///< commutativity weight of the functional map solve
    std::uint64_t seed = 0;

    Regulariser regulariser = Regulariser::sync_diffusion;
    std::optional<double> fixed_time; ///< every probe diffuses for this time
    bool eigfunc_init = false;        ///< eigenfunctions instead of random probes
    bool symmetrise = false;          ///< also diffuse probes starting on N
    Projection projection = Projection::mass_weighted;
    Index kernel_cap = default_dense_cap;

    /// T = 1e-4 for pairs far from isometric.
    static EnergyConfig non_isometric() {
        EnergyConfig c;
        c.T = 1e-4;
        return c;
    }

    void validate() const {
        if (h < 1) throw ConfigError("h must be at least 1");
        if (!(T >= 0.0)) throw ConfigError("T must be non-negative");
        if (!(tau > 0.0)) throw ConfigError("tau must be positive");
        if (!(lambda_couple >= 0.0) || !(lambda_struct >= 0.0) || !(lambda_bij >= 0.0) ||
            !(lambda_orth >= 0.0) || !(fmap_lambda >= 0.0)) {
            throw ConfigError("energy weights must be non-negative");
        }
        if (fixed_time && !(*fixed_time >= 0.0)) throw ConfigError("fixed time must be non-negative");
    }
};

/// Probe set for shape `basis` under the config's sampling options.
inline RandomFunctionSet probe_functions(const SpectralBasis& basis, const EnergyConfig& cfg, std::uint64_t seed) {
    RandomFunctionSet set = sample_random_functions(basis.size(), cfg.h, cfg.T, seed);
    if (cfg.eigfunc_init) set = eigenfunction_set(basis, cfg.h, set.times);
    if (cfg.fixed_time) set = with_fixed_time(std::move(set), *cfg.fixed_time);
    set.seed = seed;
    return set;
}

// --- individual terms -------------------------------------------------------

/// ||h_t^M(F) - Pi_MN h_t^N(Pi_NM F)||_F^2 for one shared time t.
inline double e_diff(const Eigen::MatrixXd& F, double t, const Eigen::MatrixXd& P_MN, const Eigen::MatrixXd& P_NM,
                     const SpectralBasis& basis_M, const SpectralBasis& basis_N,
                     Projection proj = Projection::mass_weighted) {
    const Eigen::MatrixXd lhs = diffuse_spectral(basis_M, F, t, proj);
    const Eigen::MatrixXd rhs = P_MN * diffuse_spectral(basis_N, P_NM * F, t, proj);
    return (lhs - rhs).squaredNorm();
}

/// Sum over columns of e_diff at each column's own time. `per_column`, if
/// given, receives the individual terms.
inline double l_diff(const RandomFunctionSet& set, const Eigen::MatrixXd& P_MN, const Eigen::MatrixXd& P_NM,
                     const SpectralBasis& basis_M, const SpectralBasis& basis_N,
                     Projection proj = Projection::mass_weighted, std::vector<double>* per_column = nullptr) {
    const Eigen::MatrixXd lhs = diffuse_spectral_columns(basis_M, set.F, set.times, proj);
    const Eigen::MatrixXd rhs = P_MN * diffuse_spectral_columns(basis_N, P_NM * set.F, set.times, proj);
    const Eigen::VectorXd cols = (lhs - rhs).colwise().squaredNorm().transpose();
    if (per_column) per_column->assign(cols.data(), cols.data() + cols.size());
    return cols.sum();
}

namespace detail {

/// W_ab = sum_i exp(-t_i (x_a + y_b)).
inline Eigen::MatrixXd decay_weights(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& times) {
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(x.size(), y.size());
    for (Index i = 0; i < times.size(); ++i) {
        const Eigen::VectorXd ex = (-times(i) * x.array()).exp().matrix();
        const Eigen::VectorXd ey = (-times(i) * y.array()).exp().matrix();
        W.noalias() += ex * ey.transpose();
    }
    return W;
}

/// Gram matrices of the kernel term: Phi_M^T Phi_M, Phi_M^T P, P^T P with P = Pi_NM^T Phi_N.
struct KernelGrams {
    Eigen::MatrixXd P, AA, AP, PP;
};

inline KernelGrams kernel_grams(const SpectralBasis& basis_M, const SpectralBasis& basis_N,
                                const Eigen::MatrixXd& P_NM) {
    KernelGrams g;
    g.P = P_NM.transpose() * basis_N.eigenvectors;
    g.AA = basis_M.eigenvectors.transpose() * basis_M.eigenvectors;
    g.AP = basis_M.eigenvectors.transpose() * g.P;
    g.PP = g.P.transpose() * g.P;
    return g;
}

} // namespace detail

/// sum_i ||D_M^{t_i} - Pi_NM^T D_N^{t_i} Pi_NM||_F^2 with D^t = Phi exp(-t Lambda) Phi^T,
/// evaluated through k x k Gram matrices instead of dense kernels.
inline double l_kernel(const SpectralBasis& basis_M, const SpectralBasis& basis_N, const Eigen::VectorXd& times,
                       const Eigen::MatrixXd& P_NM, Index cap = default_dense_cap,
                       std::vector<double>* per_time = nullptr) {
    if (basis_M.size() > cap || basis_N.size() > cap) {
        throw ConfigError("kernel energy: mesh size exceeds the dense cap of " + std::to_string(cap));
    }
    const auto g = detail::kernel_grams(basis_M, basis_N, P_NM);
    const auto& lm = basis_M.eigenvalues;
    const auto& ln = basis_N.eigenvalues;
    const Eigen::ArrayXXd aa2 = g.AA.array().square(), ap2 = g.AP.array().square(), pp2 = g.PP.array().square();
    double total = 0.0;
    if (per_time) per_time->clear();
    for (Index i = 0; i < times.size(); ++i) {
        Eigen::VectorXd t(1);
        t << times(i);
        const double v = (aa2 * detail::decay_weights(lm, lm, t).array()).sum() -
                         2.0 * (ap2 * detail::decay_weights(lm, ln, t).array()).sum() +
                         (pp2 * detail::decay_weights(ln, ln, t).array()).sum();
        if (per_time) per_time->push_back(v);
        total += v;
    }
    return total;
}

/// tr((Pi_NM V_M)^T L_N (Pi_NM V_M)).
inline double l_dirichlet(const Eigen::MatrixXd& P_NM, const Eigen::MatrixXd& V_M, const SparseMatrix& L_N) {
    const Eigen::MatrixXd X = P_NM * V_M;
    return (X.transpose() * (L_N * X)).trace();
}

/// ||F - Pi_MN Pi_NM F||_F^2.
inline double l_cycle(const Eigen::MatrixXd& F, const Eigen::MatrixXd& P_MN, const Eigen::MatrixXd& P_NM) {
    return (F - P_MN * (P_NM * F)).squaredNorm();
}

/// ||C_MN - Phi_N^T M_N Pi_NM Phi_M||^2 + ||C_NM - Phi_M^T M_M Pi_MN Phi_N||^2.
inline double l_couple(const Eigen::MatrixXd& C_MN, const Eigen::MatrixXd& C_NM, const Eigen::MatrixXd& P_MN,
                       const Eigen::MatrixXd& P_NM, const SpectralBasis& basis_M, const SpectralBasis& basis_N) {
    return (C_MN - pointwise_to_fmap(P_NM, basis_N, basis_M).C).squaredNorm() +
           (C_NM - pointwise_to_fmap(P_MN, basis_M, basis_N).C).squaredNorm();
}

/// lambda_bij (||C_MN C_NM - I||^2 + ||C_NM C_MN - I||^2)
///   + lambda_orth (||C_MN^T C_MN - I||^2 + ||C_NM^T C_NM - I||^2).
inline double l_struct(const Eigen::MatrixXd& C_MN, const Eigen::MatrixXd& C_NM, double lambda_bij = 1.0,
                       double lambda_orth = 1.0) {
    if (C_MN.rows() != C_MN.cols() || C_MN.rows() != C_NM.rows() || C_NM.rows() != C_NM.cols()) {
        throw ConfigError("structural energy needs square functional maps of equal order");
    }
    const Index k = C_MN.rows();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
    const double bij = (C_MN * C_NM - I).squaredNorm() + (C_NM * C_MN - I).squaredNorm();
    const double orth = (C_MN.transpose() * C_MN - I).squaredNorm() + (C_NM.transpose() * C_NM - I).squaredNorm();
    return lambda_bij * bij + lambda_orth * orth;
}

// --- total -------------------------------------------------------------------

/// Soft maps in both directions and the functional maps that accompany them.
struct PairMaps {
    Eigen::MatrixXd P_MN; ///< n_M x n_N
    Eigen::MatrixXd P_NM; ///< n_N x n_M
    Eigen::MatrixXd C_MN; ///< k_N x k_M
    Eigen::MatrixXd C_NM; ///< k_M x k_N
};

/// Probe sets used by one energy evaluation; `N` is only read when symmetrising.
struct ProbeSets {
    RandomFunctionSet M;
    RandomFunctionSet N;
};

inline ProbeSets make_probes(const Shape& M, const Shape& N, const EnergyConfig& cfg, std::uint64_t seed) {
    return {probe_functions(M.basis, cfg, seed), probe_functions(N.basis, cfg, seed ^ 0x9e3779b97f4a7c15ULL)};
}

struct EnergyBreakdown {
    Regulariser regulariser = Regulariser::sync_diffusion;
    double l_diff = 0.0; ///< value of the regulariser slot
    double l_couple = 0.0;
    double l_struct = 0.0;
    double l_total = 0.0;
    std::vector<double> per_time_terms;
    std::uint64_t seed = 0;
};

/// Regulariser + lambda_couple L_couple + lambda_struct L_struct.
inline EnergyBreakdown l_total(const Shape& M, const Shape& N, const PairMaps& maps, const ProbeSets& probes,
                               const EnergyConfig& cfg) {
    EnergyBreakdown out;
    out.regulariser = cfg.regulariser;
    out.seed = probes.M.seed;
    switch (cfg.regulariser) {
    case Regulariser::none: break;
    case Regulariser::sync_diffusion: {
        out.l_diff = l_diff(probes.M, maps.P_MN, maps.P_NM, M.basis, N.basis, cfg.projection, &out.per_time_terms);
        if (cfg.symmetrise) {
            std::vector<double> back;
            out.l_diff += l_diff(probes.N, maps.P_NM, maps.P_MN, N.basis, M.basis, cfg.projection, &back);
            out.per_time_terms.insert(out.per_time_terms.end(), back.begin(), back.end());
        }
        break;
    }
    case Regulariser::kernel:
        out.l_diff = l_kernel(M.basis, N.basis, probes.M.times, maps.P_NM, cfg.kernel_cap, &out.per_time_terms);
        break;
    case Regulariser::dirichlet:
        out.l_diff = l_dirichlet(maps.P_NM, M.mesh.vertices(), N.ops.stiffness);
        break;
    case Regulariser::cycle:
        out.l_diff = l_cycle(probes.M.F, maps.P_MN, maps.P_NM);
        if (cfg.symmetrise) out.l_diff += l_cycle(probes.N.F, maps.P_NM, maps.P_MN);
        break;
    }
    if (cfg.lambda_couple != 0.0) out.l_couple = l_couple(maps.C_MN, maps.C_NM, maps.P_MN, maps.P_NM, M.basis, N.basis);
    if (cfg.lambda_struct != 0.0) out.l_struct = l_struct(maps.C_MN, maps.C_NM, cfg.lambda_bij, cfg.lambda_orth);
    out.l_total = out.l_diff + cfg.lambda_couple * out.l_couple + cfg.lambda_struct * out.l_struct;
    return out;
}

} // namespace syncdiff
