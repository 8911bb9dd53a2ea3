#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "syncdiff/correspondence.hpp"
#include "syncdiff/geodesic.hpp"

namespace syncdiff {

/// Lazily computed geodesic rows of one target mesh, scaled by 1/sqrt(area).
class GeodesicOracle {
public:
    explicit GeodesicOracle(const TriangleMesh& target)
        : mesh_(target), graph_(target), inv_sqrt_area_(1.0 / std::sqrt(surface_area(target))) {}

    /// Normalised distance from `source` to every vertex.
    const std::vector<double>& row(int source) {
        if (source < 0 || source >= static_cast<int>(graph_.size())) {
            throw ConfigError("geodesic source " + std::to_string(source) + " out of range");
        }
        auto it = rows_.find(source);
        if (it != rows_.end()) return it->second;
        std::vector<double> d = dijkstra(graph_, source);
        detail::check_reachable(d, mesh_, source);
        for (double& x : d) x *= inv_sqrt_area_;
        return rows_.emplace(source, std::move(d)).first->second;
    }

    Index size() const noexcept { return static_cast<Index>(graph_.size()); }

private:
    TriangleMesh mesh_;
    EdgeGraph graph_;
    double inv_sqrt_area_;
    std::unordered_map<int, std::vector<double>> rows_;
};

struct ErrorProfile {
    std::vector<double> per_vertex_errors; ///< geodesic error / sqrt(target area)
    double mean = 0.0;
    std::vector<double> thresholds;
    std::vector<double> pck;
    double auc = 0.0;
    double max_threshold = 0.0;

    double mean_x100() const { return 100.0 * mean; }
};

/// error_i = d_N(pred_i, gt_i) / sqrt(area_N).
inline ErrorProfile geodesic_error(const HardCorrespondence& pred, const HardCorrespondence& gt,
                                   GeodesicOracle& target) {
    if (pred.size() != gt.size()) {
        throw ConfigError("prediction has " + std::to_string(pred.size()) + " entries but ground truth has " +
                          std::to_string(gt.size()));
    }
    ErrorProfile out;
    out.per_vertex_errors.resize(pred.target_index.size());
    for (std::size_t i = 0; i < pred.target_index.size(); ++i) {
        const int p = pred.target_index[i];
        if (p < 0 || p >= target.size()) {
            throw ConfigError("predicted index " + std::to_string(p) + " of source vertex " + std::to_string(i) +
                              " is out of range");
        }
        out.per_vertex_errors[i] = target.row(gt.target_index[i])[static_cast<std::size_t>(p)];
    }
    double sum = 0.0;
    for (double e : out.per_vertex_errors) sum += e;
    out.mean = out.per_vertex_errors.empty() ? 0.0 : sum / static_cast<double>(out.per_vertex_errors.size());
    return out;
}

inline ErrorProfile geodesic_error(const HardCorrespondence& pred, const HardCorrespondence& gt,
                                   const TriangleMesh& target) {
    GeodesicOracle oracle(target);
    return geodesic_error(pred, gt, oracle);
}

/// Fills the PCK curve at `num_samples` evenly spaced thresholds in
/// [0, max_threshold] and its trapezoid-rule area divided by max_threshold.
inline void pck_and_auc(ErrorProfile& profile, double max_threshold, int num_samples = 101) {
    if (!(max_threshold > 0.0)) throw ConfigError("max_threshold must be positive");
    if (num_samples < 2) throw ConfigError("PCK needs at least two threshold samples");
    std::vector<double> sorted = profile.per_vertex_errors;
    std::sort(sorted.begin(), sorted.end());
    const double n = std::max<double>(1.0, static_cast<double>(sorted.size()));
    profile.max_threshold = max_threshold;
    profile.thresholds.resize(static_cast<std::size_t>(num_samples));
    profile.pck.resize(static_cast<std::size_t>(num_samples));
    for (int s = 0; s < num_samples; ++s) {
        const double theta = max_threshold * s / (num_samples - 1);
        const auto hit = std::upper_bound(sorted.begin(), sorted.end(), theta) - sorted.begin();
        profile.thresholds[s] = theta;
        profile.pck[s] = sorted.empty() ? 1.0 : static_cast<double>(hit) / n;
    }
    double area = 0.0;
    for (int s = 1; s < num_samples; ++s)
        area += 0.5 * (profile.pck[s] + profile.pck[s - 1]) * (profile.thresholds[s] - profile.thresholds[s - 1]);
    profile.auc = area / max_threshold;
}

/// Fraction of target vertices hit by the map.
inline double coverage(const HardCorrespondence& pred, Index n_target) {
    if (n_target <= 0) throw ConfigError("target must have vertices");
    std::vector<char> hit(static_cast<std::size_t>(n_target), 0);
    Index distinct = 0;
    for (int j : pred.target_index) {
        if (j < 0 || j >= n_target) throw ConfigError("map index out of range");
        if (!hit[j]) {
            hit[j] = 1;
            ++distinct;
        }
    }
    return static_cast<double>(distinct) / static_cast<double>(n_target);
}

/// Dirichlet energy tr((Pi_AB V_B)^T L_A (Pi_AB V_B)) of the coordinates
/// pulled back through a map A -> B.
inline double map_smoothness(const Eigen::MatrixXd& P_AB, const Eigen::MatrixXd& V_B, const SparseMatrix& L_A) {
    const Eigen::MatrixXd X = P_AB * V_B;
    return (X.transpose() * (L_A * X)).trace();
}

/// Hard maps are lifted to 0/1 rows without forming the dense matrix.
inline double map_smoothness(const HardCorrespondence& map_AB, const Eigen::MatrixXd& V_B, const SparseMatrix& L_A) {
    if (map_AB.size() != L_A.rows()) throw ConfigError("map length does not match the source operator");
    Eigen::MatrixXd X(map_AB.size(), V_B.cols());
    for (Index i = 0; i < map_AB.size(); ++i) {
        const int j = map_AB.target_index[static_cast<std::size_t>(i)];
        if (j < 0 || j >= V_B.rows()) throw ConfigError("map index out of range");
        X.row(i) = V_B.row(j);
    }
    return (X.transpose() * (L_A * X)).trace();
}

} // namespace syncdiff
