#pragma once

#include <optional>
#include <string>
#include <vector>

#include "syncdiff/correspondence.hpp"
#include "syncdiff/descriptors.hpp"
#include "syncdiff/energies.hpp"
#include "syncdiff/evaluation.hpp"
#include "syncdiff/optimizer.hpp"
#include "syncdiff/shape.hpp"

namespace syncdiff {

enum class MatchMode { descriptor_nn, fmap, refine };

inline const char* to_string(MatchMode m) {
    switch (m) {
    case MatchMode::descriptor_nn: return "descriptor_nn";
    case MatchMode::fmap: return "fmap";
    case MatchMode::refine: return "refine";
    }
    return "unknown";
}

inline MatchMode parse_match_mode(const std::string& s) {
    for (auto m : {MatchMode::descriptor_nn, MatchMode::fmap, MatchMode::refine})
        if (s == to_string(m)) return m;
    throw ConfigError("unknown match mode '" + s + "'");
}

/// How the final hard map is read off.
enum class Decoder { soft_argmax, fmap_nn };

inline const char* to_string(Decoder d) { return d == Decoder::soft_argmax ? "soft_argmax" : "fmap_nn"; }

inline Decoder parse_decoder(const std::string& s) {
    if (s == "soft_argmax") return Decoder::soft_argmax;
    if (s == "fmap_nn") return Decoder::fmap_nn;
    throw ConfigError("unknown decoder '" + s + "'");
}

struct PipelineConfig {
    Index k = 128;           ///< spectral basis size
    Index descriptor_dim = 128;
    DescriptorKind descriptor = DescriptorKind::wks;
    MatchMode mode = MatchMode::refine;
    Decoder decoder = Decoder::soft_argmax;
    bool standardise = true; ///< joint column standardisation of the descriptors
    EnergyConfig energy;
    OptimConfig optim;
    double max_threshold = 0.1;
    int pck_samples = 101;
};

struct Metrics {
    double mean_geo_error_x100 = 0.0;
    double auc = 0.0;
    double coverage = 0.0;
    double smoothness = 0.0;
    double max_threshold = 0.0;
    std::vector<double> thresholds;
    std::vector<double> pck;
};

struct PairResult {
    HardCorrespondence map_MN;
    HardCorrespondence map_NM;
    HardCorrespondence init_MN; ///< descriptor nearest-neighbour map, for reference
    Decoder decoder = Decoder::soft_argmax;
    std::vector<TraceRow> trace;
    std::optional<EnergyBreakdown> energy; ///< refine mode only
    std::optional<Metrics> metrics;
    std::optional<Metrics> init_metrics;
};

inline DescriptorMatrix compute_descriptor(const Shape& s, const PipelineConfig& cfg) {
    switch (cfg.descriptor) {
    case DescriptorKind::wks: return compute_wks(s.basis, cfg.descriptor_dim);
    case DescriptorKind::hks: return compute_hks(s.basis, cfg.descriptor_dim);
    case DescriptorKind::xyz: return xyz_descriptor(s.mesh);
    }
    throw ConfigError("unknown descriptor kind");
}

/// Mean error, PCK/AUC, coverage and smoothness of a map M -> N.
inline Metrics evaluate_map(const HardCorrespondence& map_MN, const HardCorrespondence& gt, const Shape& M,
                            const Shape& N, GeodesicOracle& oracle, double max_threshold, int samples) {
    ErrorProfile prof = geodesic_error(map_MN, gt, oracle);
    pck_and_auc(prof, max_threshold, samples);
    Metrics m;
    m.mean_geo_error_x100 = prof.mean_x100();
    m.auc = prof.auc;
    m.coverage = coverage(map_MN, N.size());
    m.smoothness = map_smoothness(map_MN, N.mesh.vertices(), M.ops.stiffness);
    m.max_threshold = max_threshold;
    m.thresholds = std::move(prof.thresholds);
    m.pck = std::move(prof.pck);
    return m;
}

/// Runs one matching mode on a prepared pair and, given ground truth,
/// evaluates it (and the descriptor initialisation) against it.
inline PairResult run_pair(const Shape& M, const Shape& N, const PipelineConfig& cfg,
                           const HardCorrespondence* gt = nullptr, GeodesicOracle* oracle = nullptr) {
    cfg.energy.validate();
    Eigen::MatrixXd D_M = compute_descriptor(M, cfg).values;
    Eigen::MatrixXd D_N = compute_descriptor(N, cfg).values;
    if (cfg.standardise) standardise_jointly(D_M, D_N);

    PairResult res;
    res.decoder = cfg.decoder;
    Eigen::VectorXd nm, nn;
    const Eigen::MatrixXd Eh_M = detail::normalise_rows(D_M, nm), Eh_N = detail::normalise_rows(D_N, nn);
    res.init_MN = nearest_rows(Eh_M, Eh_N);
    const HardCorrespondence init_NM = nearest_rows(Eh_N, Eh_M);

    auto fmap_decode = [&](const Eigen::MatrixXd& E_M, const Eigen::MatrixXd& E_N) {
        const Eigen::MatrixXd A_M = project_descriptors(M.basis, E_M), A_N = project_descriptors(N.basis, E_N);
        const auto C_NM = solve_functional_map(A_N, A_M, N.basis.eigenvalues, M.basis.eigenvalues,
                                               cfg.energy.fmap_lambda);
        const auto C_MN = solve_functional_map(A_M, A_N, M.basis.eigenvalues, N.basis.eigenvalues,
                                               cfg.energy.fmap_lambda);
        return std::make_pair(fmap_to_pointwise(C_NM, M.basis, N.basis), fmap_to_pointwise(C_MN, N.basis, M.basis));
    };

    switch (cfg.mode) {
    case MatchMode::descriptor_nn:
        res.map_MN = res.init_MN;
        res.map_NM = init_NM;
        break;
    case MatchMode::fmap: {
        auto [a, b] = fmap_decode(Eh_M, Eh_N);
        res.map_MN = std::move(a);
        res.map_NM = std::move(b);
        break;
    }
    case MatchMode::refine: {
        auto out = refine_pair(M, N, D_M, D_N, cfg.energy, cfg.optim);
        res.trace = std::move(out.trace);
        res.energy = std::move(out.final_energy);
        if (cfg.decoder == Decoder::soft_argmax || out.state.parametrisation == Parametrisation::direct_scores) {
            res.map_MN = std::move(out.map_MN);
            res.map_NM = std::move(out.map_NM);
        } else {
            Eigen::VectorXd a, b;
            auto [x, y] = fmap_decode(detail::normalise_rows(out.state.E_M, a), detail::normalise_rows(out.state.E_N, b));
            res.map_MN = std::move(x);
            res.map_NM = std::move(y);
        }
        break;
    }
    }

    if (gt) {
        std::optional<GeodesicOracle> local;
        if (!oracle) oracle = &local.emplace(N.mesh);
        res.metrics = evaluate_map(res.map_MN, *gt, M, N, *oracle, cfg.max_threshold, cfg.pck_samples);
        res.init_metrics = evaluate_map(res.init_MN, *gt, M, N, *oracle, cfg.max_threshold, cfg.pck_samples);
    }
    return res;
}

/// Named ablation settings: the full loss and the six variants it is compared with.
struct AblationSetting {
    std::string name;
    EnergyConfig energy;
};

inline std::vector<AblationSetting> ablation_settings(const EnergyConfig& full) {
    std::vector<AblationSetting> out;
    out.push_back({"full", full});
    EnergyConfig c = full;
    c.regulariser = Regulariser::none;
    out.push_back({"no_ldiff", c});
    c = full;
    c.fixed_time = 0.5 * full.T;
    out.push_back({"fixed_t", c});
    c = full;
    c.eigfunc_init = true;
    out.push_back({"eigfunc_init", c});
    for (auto r : {Regulariser::kernel, Regulariser::dirichlet, Regulariser::cycle}) {
        c = full;
        c.regulariser = r;
        out.push_back({std::string(to_string(r)) + "_energy", c});
    }
    return out;
}

} // namespace syncdiff
