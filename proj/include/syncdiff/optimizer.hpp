#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "syncdiff/correspondence.hpp"
#include "syncdiff/energies.hpp"

namespace syncdiff {

enum class Parametrisation {
    features,      ///< per-vertex feature rows E_M, E_N
    direct_scores, ///< free n_M x n_N similarity logits; functional maps stay at their initial value
};

inline const char* to_string(Parametrisation p) {
    return p == Parametrisation::features ? "features" : "direct_scores";
}

struct OptimConfig {
    int max_iters = 50;
    double initial_step = 0.5;    ///< Frobenius length of the first trial step
    double backtrack = 0.5;
    double armijo = 1e-4;
    int max_backtracks = 30;
    double grad_tolerance = 1e-10;
    bool resample_each_iter = false;
    Parametrisation parametrisation = Parametrisation::features;

    void validate() const {
        if (max_iters < 0) throw ConfigError("max_iters must be non-negative");
        if (!(initial_step > 0.0)) throw ConfigError("initial step size must be positive");
        if (!(backtrack > 0.0 && backtrack < 1.0)) throw ConfigError("backtracking factor must lie in (0, 1)");
        if (!(armijo >= 0.0 && armijo < 1.0)) throw ConfigError("Armijo constant must lie in [0, 1)");
    }
};

/// One row of the energy trace CSV.
struct TraceRow {
    int iter = 0;
    double l_diff = 0.0;
    double l_couple = 0.0;
    double l_struct = 0.0;
    double l_total = 0.0;
    double step_size = 0.0;
};

/// Optimisation variables and the quantities derived from them.
struct PairState {
    Parametrisation parametrisation = Parametrisation::features;
    Eigen::MatrixXd E_M, E_N; ///< features (n x d); unused for direct scores
    Eigen::MatrixXd S;        ///< logits (n_M x n_N); unused for features
    PairMaps maps;            ///< recomputed by evaluate_pair before every use
    int iteration = 0;
    std::vector<TraceRow> trace;
};

/// Gradient with respect to whichever variables the parametrisation uses.
struct PairGradient {
    Eigen::MatrixXd dE_M, dE_N, dS;

    double squared_norm() const { return dE_M.squaredNorm() + dE_N.squaredNorm() + dS.squaredNorm(); }
};

/// Gradient of the energy with respect to the derived maps.
struct MapGradient {
    Eigen::MatrixXd dP_MN, dP_NM, dC_MN, dC_NM;
};

namespace detail {

inline Eigen::MatrixXd normalise_rows(const Eigen::MatrixXd& E, Eigen::VectorXd& norms) {
    norms = E.rowwise().norm().cwiseMax(1e-300);
    return norms.cwiseInverse().asDiagonal() * E;
}

/// Backward pass of y = x / ||x|| row by row.
inline Eigen::MatrixXd normalise_rows_backward(const Eigen::MatrixXd& Y, const Eigen::VectorXd& norms,
                                               const Eigen::MatrixXd& dY) {
    const Eigen::VectorXd dots = (Y.array() * dY.array()).rowwise().sum().matrix();
    return norms.cwiseInverse().asDiagonal() * (dY - dots.asDiagonal() * Y);
}

/// Backward pass of P = row-softmax(Z).
inline Eigen::MatrixXd softmax_rows_backward(const Eigen::MatrixXd& P, const Eigen::MatrixXd& dP) {
    const Eigen::VectorXd dots = (P.array() * dP.array()).rowwise().sum().matrix();
    return (P.array() * (dP.colwise() - dots).array()).matrix();
}

/// Transpose of the column-wise spectral diffusion operator applied to Y.
inline Eigen::MatrixXd diffuse_columns_transpose(const SpectralBasis& basis, const Eigen::MatrixXd& Y,
                                                 const Eigen::VectorXd& times, Projection proj) {
    Eigen::MatrixXd coef = basis.eigenvectors.transpose() * Y;
    for (Index j = 0; j < coef.cols(); ++j) coef.col(j).array() *= (-times(j) * basis.eigenvalues.array()).exp();
    Eigen::MatrixXd out = basis.eigenvectors * coef;
    if (proj == Projection::mass_weighted) out = basis.mass.asDiagonal() * out;
    return out;
}

/// l_diff(set on M) and its gradient, added into dP_MN and dP_NM.
inline double sync_diffusion_term(const RandomFunctionSet& set, const Eigen::MatrixXd& P_MN,
                                  const Eigen::MatrixXd& P_NM, const SpectralBasis& bM, const SpectralBasis& bN,
                                  Projection proj, Eigen::MatrixXd* dP_MN, Eigen::MatrixXd* dP_NM,
                                  std::vector<double>* per_column) {
    const Eigen::MatrixXd A = diffuse_spectral_columns(bM, set.F, set.times, proj);
    const Eigen::MatrixXd B = diffuse_spectral_columns(bN, P_NM * set.F, set.times, proj);
    const Eigen::MatrixXd R = A - P_MN * B;
    const Eigen::VectorXd cols = R.colwise().squaredNorm().transpose();
    if (per_column) per_column->insert(per_column->end(), cols.data(), cols.data() + cols.size());
    if (dP_MN) dP_MN->noalias() -= 2.0 * R * B.transpose();
    if (dP_NM) {
        const Eigen::MatrixXd Q = diffuse_columns_transpose(bN, P_MN.transpose() * R, set.times, proj);
        dP_NM->noalias() -= 2.0 * Q * set.F.transpose();
    }
    return cols.sum();
}

inline double kernel_term(const SpectralBasis& bM, const SpectralBasis& bN, const Eigen::VectorXd& times,
                          const Eigen::MatrixXd& P_NM, Eigen::MatrixXd* dP_NM) {
    const auto g = kernel_grams(bM, bN, P_NM);
    const Eigen::MatrixXd Wmm = decay_weights(bM.eigenvalues, bM.eigenvalues, times);
    const Eigen::MatrixXd Wmn = decay_weights(bM.eigenvalues, bN.eigenvalues, times);
    const Eigen::MatrixXd Wnn = decay_weights(bN.eigenvalues, bN.eigenvalues, times);
    const double value = (g.AA.array().square() * Wmm.array()).sum() -
                         2.0 * (g.AP.array().square() * Wmn.array()).sum() +
                         (g.PP.array().square() * Wnn.array()).sum();
    if (dP_NM) {
        const Eigen::MatrixXd dP = -4.0 * bM.eigenvectors * (g.AP.array() * Wmn.array()).matrix() +
                                   4.0 * g.P * (g.PP.array() * Wnn.array()).matrix();
        dP_NM->noalias() += bN.eigenvectors * dP.transpose();
    }
    return value;
}

inline double cycle_term(const Eigen::MatrixXd& F, const Eigen::MatrixXd& P_MN, const Eigen::MatrixXd& P_NM,
                         Eigen::MatrixXd* dP_MN, Eigen::MatrixXd* dP_NM) {
    const Eigen::MatrixXd G = P_NM * F;
    const Eigen::MatrixXd R = F - P_MN * G;
    if (dP_MN) dP_MN->noalias() -= 2.0 * R * G.transpose();
    if (dP_NM) dP_NM->noalias() -= 2.0 * (P_MN.transpose() * R) * F.transpose();
    return R.squaredNorm();
}

} // namespace detail

/// Energy breakdown and its gradient with respect to Pi_MN, Pi_NM, C_MN, C_NM.
/// Values agree with l_total; the gradient is written into `grad` when non-null.
inline EnergyBreakdown energy_and_map_gradient(const Shape& M, const Shape& N, const PairMaps& maps,
                                               const ProbeSets& probes, const EnergyConfig& cfg,
                                               MapGradient* grad) {
    EnergyBreakdown out;
    out.regulariser = cfg.regulariser;
    out.seed = probes.M.seed;
    Eigen::MatrixXd *dMN = nullptr, *dNM = nullptr;
    if (grad) {
        grad->dP_MN = Eigen::MatrixXd::Zero(maps.P_MN.rows(), maps.P_MN.cols());
        grad->dP_NM = Eigen::MatrixXd::Zero(maps.P_NM.rows(), maps.P_NM.cols());
        grad->dC_MN = Eigen::MatrixXd::Zero(maps.C_MN.rows(), maps.C_MN.cols());
        grad->dC_NM = Eigen::MatrixXd::Zero(maps.C_NM.rows(), maps.C_NM.cols());
        dMN = &grad->dP_MN;
        dNM = &grad->dP_NM;
    }

    switch (cfg.regulariser) {
    case Regulariser::none: break;
    case Regulariser::sync_diffusion:
        out.l_diff = detail::sync_diffusion_term(probes.M, maps.P_MN, maps.P_NM, M.basis, N.basis, cfg.projection,
                                                 dMN, dNM, &out.per_time_terms);
        if (cfg.symmetrise) {
            out.l_diff += detail::sync_diffusion_term(probes.N, maps.P_NM, maps.P_MN, N.basis, M.basis,
                                                      cfg.projection, dNM, dMN, &out.per_time_terms);
        }
        break;
    case Regulariser::kernel:
        if (M.size() > cfg.kernel_cap || N.size() > cfg.kernel_cap) {
            throw ConfigError("kernel energy: mesh size exceeds the dense cap of " + std::to_string(cfg.kernel_cap));
        }
        out.l_diff = detail::kernel_term(M.basis, N.basis, probes.M.times, maps.P_NM, dNM);
        break;
    case Regulariser::dirichlet: {
        const Eigen::MatrixXd& V = M.mesh.vertices();
        const Eigen::MatrixXd X = maps.P_NM * V;
        const Eigen::MatrixXd LX = N.ops.stiffness * X;
        out.l_diff = (X.transpose() * LX).trace();
        if (dNM) dNM->noalias() += 2.0 * LX * V.transpose();
        break;
    }
    case Regulariser::cycle:
        out.l_diff = detail::cycle_term(probes.M.F, maps.P_MN, maps.P_NM, dMN, dNM);
        if (cfg.symmetrise) out.l_diff += detail::cycle_term(probes.N.F, maps.P_NM, maps.P_MN, dNM, dMN);
        break;
    }

    if (cfg.lambda_couple != 0.0) {
        const Eigen::MatrixXd MPhiN = N.basis.mass.asDiagonal() * N.basis.eigenvectors;
        const Eigen::MatrixXd MPhiM = M.basis.mass.asDiagonal() * M.basis.eigenvectors;
        const Eigen::MatrixXd D1 = maps.C_MN - MPhiN.transpose() * (maps.P_NM * M.basis.eigenvectors);
        const Eigen::MatrixXd D2 = maps.C_NM - MPhiM.transpose() * (maps.P_MN * N.basis.eigenvectors);
        out.l_couple = D1.squaredNorm() + D2.squaredNorm();
        if (grad) {
            const double w = 2.0 * cfg.lambda_couple;
            grad->dC_MN += w * D1;
            grad->dC_NM += w * D2;
            grad->dP_NM.noalias() -= w * (MPhiN * D1) * M.basis.eigenvectors.transpose();
            grad->dP_MN.noalias() -= w * (MPhiM * D2) * N.basis.eigenvectors.transpose();
        }
    }
    if (cfg.lambda_struct != 0.0) {
        out.l_struct = l_struct(maps.C_MN, maps.C_NM, cfg.lambda_bij, cfg.lambda_orth);
        if (grad) {
            const auto& A = maps.C_MN;
            const auto& B = maps.C_NM;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(A.rows(), A.cols());
            const Eigen::MatrixXd X = A * B - I, Y = B * A - I;
            const double wb = 2.0 * cfg.lambda_bij * cfg.lambda_struct;
            const double wo = 4.0 * cfg.lambda_orth * cfg.lambda_struct;
            grad->dC_MN += wb * (X * B.transpose() + B.transpose() * Y) + wo * A * (A.transpose() * A - I);
            grad->dC_NM += wb * (A.transpose() * X + Y * A.transpose()) + wo * B * (B.transpose() * B - I);
        }
    }
    out.l_total = out.l_diff + cfg.lambda_couple * out.l_couple + cfg.lambda_struct * out.l_struct;

    const std::pair<const char*, double> terms[] = {
        {"l_diff", out.l_diff}, {"l_couple", out.l_couple}, {"l_struct", out.l_struct}};
    for (const auto& [name, v] : terms) {
        if (!std::isfinite(v)) throw SolverError(std::string("energy term ") + name + " is not finite");
    }
    return out;
}

namespace detail {

/// Intermediate values of the forward pass that the backward pass reuses.
struct Forward {
    Eigen::MatrixXd Eh_M, Eh_N;
    Eigen::VectorXd norm_M, norm_N;
    Eigen::MatrixXd A_M, A_N;
    FmapSystem f_MN, f_NM;
};

} // namespace detail

/// Initial state: features as given, or logits from their cosine similarity
/// together with functional maps fixed from the same descriptors.
/// Dense logits are only offered as a sanity configuration on small meshes.
inline constexpr Index direct_scores_limit = 1000;

inline PairState initial_state(const Shape& M, const Shape& N, const Eigen::MatrixXd& D_M, const Eigen::MatrixXd& D_N,
                               const EnergyConfig& cfg, Parametrisation param) {
    if (D_M.rows() != M.size() || D_N.rows() != N.size() || D_M.cols() != D_N.cols()) {
        throw ConfigError("descriptor matrices do not match the shapes");
    }
    PairState st;
    st.parametrisation = param;
    st.E_M = D_M;
    st.E_N = D_N;
    if (param == Parametrisation::direct_scores) {
        if (std::max(M.size(), N.size()) >= direct_scores_limit) {
            throw ConfigError("direct score parametrisation is limited to meshes under " +
                              std::to_string(direct_scores_limit) + " vertices");
        }
        Eigen::VectorXd nM, nN;
        st.S = detail::normalise_rows(D_M, nM) * detail::normalise_rows(D_N, nN).transpose();
        const Eigen::MatrixXd A_M = project_descriptors(M.basis, detail::normalise_rows(D_M, nM));
        const Eigen::MatrixXd A_N = project_descriptors(N.basis, detail::normalise_rows(D_N, nN));
        st.maps.C_MN = solve_functional_map(A_M, A_N, M.basis.eigenvalues, N.basis.eigenvalues, cfg.fmap_lambda).C;
        st.maps.C_NM = solve_functional_map(A_N, A_M, N.basis.eigenvalues, M.basis.eigenvalues, cfg.fmap_lambda).C;
    }
    return st;
}

/// Recomputes the derived maps of `st` and evaluates the energy; fills `grad`
/// with the gradient with respect to the state's variables when non-null.
inline EnergyBreakdown evaluate_pair(const Shape& M, const Shape& N, PairState& st, const ProbeSets& probes,
                                     const EnergyConfig& cfg, PairGradient* grad) {
    detail::check_soft_size(M.size(), N.size(), default_soft_cap);
    detail::Forward fw;
    Eigen::MatrixXd S;
    const bool features = st.parametrisation == Parametrisation::features;
    if (features) {
        fw.Eh_M = detail::normalise_rows(st.E_M, fw.norm_M);
        fw.Eh_N = detail::normalise_rows(st.E_N, fw.norm_N);
        S = fw.Eh_M * fw.Eh_N.transpose();
        fw.A_M = project_descriptors(M.basis, fw.Eh_M);
        fw.A_N = project_descriptors(N.basis, fw.Eh_N);
        fw.f_MN = detail::factor_functional_map(fw.A_M, fw.A_N, M.basis.eigenvalues, N.basis.eigenvalues,
                                                cfg.fmap_lambda);
        fw.f_NM = detail::factor_functional_map(fw.A_N, fw.A_M, N.basis.eigenvalues, M.basis.eigenvalues,
                                                cfg.fmap_lambda);
        st.maps.C_MN = fw.f_MN.C;
        st.maps.C_NM = fw.f_NM.C;
    } else {
        S = st.S;
    }
    st.maps.P_MN = S / cfg.tau;
    detail::softmax_rows(st.maps.P_MN);
    st.maps.P_NM = S.transpose() / cfg.tau;
    detail::softmax_rows(st.maps.P_NM);

    MapGradient mg;
    EnergyBreakdown out = energy_and_map_gradient(M, N, st.maps, probes, cfg, grad ? &mg : nullptr);
    if (!grad) return out;

    const Eigen::MatrixXd dS = (detail::softmax_rows_backward(st.maps.P_MN, mg.dP_MN) +
                                detail::softmax_rows_backward(st.maps.P_NM, mg.dP_NM).transpose()) /
                               cfg.tau;
    if (!features) {
        *grad = {Eigen::MatrixXd(), Eigen::MatrixXd(), dS};
        return out;
    }
    Eigen::MatrixXd dA_M = Eigen::MatrixXd::Zero(fw.A_M.rows(), fw.A_M.cols());
    Eigen::MatrixXd dA_N = Eigen::MatrixXd::Zero(fw.A_N.rows(), fw.A_N.cols());
    detail::functional_map_adjoint(fw.f_MN, fw.A_M, fw.A_N, mg.dC_MN, dA_M, dA_N);
    detail::functional_map_adjoint(fw.f_NM, fw.A_N, fw.A_M, mg.dC_NM, dA_N, dA_M);
    const Eigen::MatrixXd dEh_M = dS * fw.Eh_N + M.basis.mass.asDiagonal() * (M.basis.eigenvectors * dA_M);
    const Eigen::MatrixXd dEh_N = dS.transpose() * fw.Eh_M + N.basis.mass.asDiagonal() * (N.basis.eigenvectors * dA_N);
    grad->dE_M = detail::normalise_rows_backward(fw.Eh_M, fw.norm_M, dEh_M);
    grad->dE_N = detail::normalise_rows_backward(fw.Eh_N, fw.norm_N, dEh_N);
    grad->dS.resize(0, 0);
    return out;
}

struct RefineResult {
    HardCorrespondence map_MN; ///< source vertex of M -> vertex of N
    HardCorrespondence map_NM;
    HardCorrespondence init_MN; ///< descriptor nearest-neighbour maps before refinement
    HardCorrespondence init_NM;
    PairState state;
    std::vector<TraceRow> trace;
    EnergyBreakdown final_energy; ///< at the final variables
};

namespace detail {

inline void axpy_state(PairState& st, double alpha, const PairGradient& g) {
    if (st.parametrisation == Parametrisation::features) {
        st.E_M.noalias() += alpha * g.dE_M;
        st.E_N.noalias() += alpha * g.dE_N;
    } else {
        st.S.noalias() += alpha * g.dS;
    }
}

inline TraceRow trace_row(int iter, const EnergyBreakdown& e, double step) {
    return {iter, e.l_diff, e.l_couple, e.l_struct, e.l_total, step};
}

} // namespace detail

/// Gradient descent with Armijo backtracking on a per-iteration fixed probe
/// set. Returns argmax-decoded maps in both directions.
inline RefineResult refine_pair(const Shape& M, const Shape& N, const Eigen::MatrixXd& D_M,
                                const Eigen::MatrixXd& D_N, const EnergyConfig& cfg, const OptimConfig& opt) {
    cfg.validate();
    opt.validate();
    RefineResult res;
    PairState st = initial_state(M, N, D_M, D_N, cfg, opt.parametrisation);

    ProbeSets probes = make_probes(M, N, cfg, cfg.seed);
    PairGradient g;
    EnergyBreakdown e = evaluate_pair(M, N, st, probes, cfg, &g);
    res.init_MN = hard_from_soft(st.maps.P_MN);
    res.init_NM = hard_from_soft(st.maps.P_NM);
    st.trace.push_back(detail::trace_row(0, e, 0.0));

    double alpha = -1.0;
    for (int it = 1; it <= opt.max_iters; ++it) {
        if (opt.resample_each_iter && it > 1) {
            probes = make_probes(M, N, cfg, cfg.seed + static_cast<std::uint64_t>(it - 1));
            e = evaluate_pair(M, N, st, probes, cfg, &g);
        }
        const double g2 = g.squared_norm();
        if (!(g2 > opt.grad_tolerance * opt.grad_tolerance)) break;
        if (alpha < 0.0) alpha = opt.initial_step / std::sqrt(g2);

        bool accepted = false;
        PairState trial;
        EnergyBreakdown trial_e;
        for (int b = 0; b <= opt.max_backtracks; ++b) {
            trial = st;
            detail::axpy_state(trial, -alpha, g);
            try {
                trial_e = evaluate_pair(M, N, trial, probes, cfg, nullptr);
            } catch (const SolverError&) {
                alpha *= opt.backtrack;  // singular trial point: shorten the step
                continue;
            }
            if (trial_e.l_total <= e.l_total - opt.armijo * alpha * g2) {
                accepted = true;
                break;
            }
            alpha *= opt.backtrack;
        }
        if (!accepted) break;
        st = std::move(trial);
        st.iteration = it;
        e = evaluate_pair(M, N, st, probes, cfg, &g);
        st.trace.push_back(detail::trace_row(it, e, alpha));
        alpha /= opt.backtrack;  // let the step grow back
    }

    // Maps always reflect the final variables.
    res.final_energy = evaluate_pair(M, N, st, probes, cfg, nullptr);
    res.map_MN = hard_from_soft(st.maps.P_MN);
    res.map_NM = hard_from_soft(st.maps.P_NM);
    res.trace = st.trace;
    res.state = std::move(st);
    return res;
}

} // namespace syncdiff
