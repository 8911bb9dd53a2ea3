#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Geometry>

#include "syncdiff/correspondence.hpp"
#include "syncdiff/geodesic.hpp"
#include "syncdiff/mesh.hpp"
#include "syncdiff/primitives.hpp"

namespace syncdiff {

enum class PairKind { identity, permuted, rigid_noise, isometric_bend, topological_glue };
enum class BaseShape { sphere, cylinder, plane };

inline const char* to_string(PairKind k) {
    switch (k) {
    case PairKind::identity: return "identity";
    case PairKind::permuted: return "permuted";
    case PairKind::rigid_noise: return "rigid_noise";
    case PairKind::isometric_bend: return "isometric_bend";
    case PairKind::topological_glue: return "topological_glue";
    }
    return "unknown";
}

inline const char* to_string(BaseShape b) {
    switch (b) {
    case BaseShape::sphere: return "sphere";
    case BaseShape::cylinder: return "cylinder";
    case BaseShape::plane: return "plane";
    }
    return "unknown";
}

inline PairKind parse_pair_kind(const std::string& s) {
    for (auto k : {PairKind::identity, PairKind::permuted, PairKind::rigid_noise, PairKind::isometric_bend,
                   PairKind::topological_glue})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown pair kind '" + s + "'");
}

inline BaseShape parse_base_shape(const std::string& s) {
    for (auto b : {BaseShape::sphere, BaseShape::cylinder, BaseShape::plane})
        if (s == to_string(b)) return b;
    throw ConfigError("unknown base shape '" + s + "'");
}

struct SyntheticPairSpec {
    PairKind kind = PairKind::permuted;
    BaseShape base = BaseShape::cylinder;
    /// Sphere: subdivision level. Strip: number of columns along the arc
    /// (rows follow as 0.6x, so 40 gives 1025 vertices).
    int resolution = 40;
    double noise = 0.0;         ///< rigid_noise: vertex jitter relative to mean edge length
    double bend = 1.0;          ///< isometric_bend: amplitude of the target bend (radians of turning)
    double strain = 0.008;      ///< isometric_bend: peak intrinsic stretch; 0 gives an exact isometry
    std::uint64_t seed = 0;
};

struct SyntheticPair {
    TriangleMesh M;
    TriangleMesh N;
    HardCorrespondence gt; ///< vertex of M -> vertex of N
};

namespace detail {

/// Planar curve parameterised by arc length with curvature kappa(u); returns
/// points at the requested arc lengths (integrated with fine midpoint steps).
template <class Curvature>
inline std::vector<Eigen::Vector2d> arclength_curve(const std::vector<double>& at, Curvature kappa) {
    std::vector<Eigen::Vector2d> out;
    out.reserve(at.size());
    double u = 0.0, theta = 0.0;
    Eigen::Vector2d p(0.0, 0.0);
    constexpr int substeps = 400;
    for (double target : at) {
        const double du = (target - u) / substeps;
        for (int s = 0; s < substeps; ++s) {
            const double mid = u + (s + 0.5) * du;
            const double th = theta + kappa(mid) * 0.5 * du;  // heading at the midpoint
            p += du * Eigen::Vector2d(std::cos(th), std::sin(th));
            theta += kappa(mid) * du;
        }
        u = target;
        out.push_back(p);
    }
    return out;
}

/// Strip over the right trapezoid 0 <= u <= L, 0 <= v <= h(u), rolled along a
/// planar cross-section curve: vertex (u, v) -> (gamma(u), v). Any arc-length
/// parameterised curve gives an isometric embedding of the same flat domain.
/// The optional warps stretch the flat domain along u and along v before rolling.
template <class Curvature, class WarpU = double (*)(double), class WarpV = double (*)(double)>
inline TriangleMesh rolled_strip(int nu, Curvature kappa, WarpU wu = nullptr, WarpV wv = nullptr) {
    const int nv = std::max(2, static_cast<int>(std::lround(0.6 * nu)));
    const double L = 3.0;
    std::vector<double> us(static_cast<std::size_t>(nu) + 1);
    for (int i = 0; i <= nu; ++i) {
        us[i] = L * i / nu;
        if constexpr (!std::is_pointer_v<WarpU>) us[i] = wu(us[i]);
    }
    const auto gamma = arclength_curve(us, kappa);
    TriangleMesh grid = make_grid(nu, nv);
    Vertices V(grid.num_vertices(), 3);
    for (int j = 0; j <= nv; ++j) {
        for (int i = 0; i <= nu; ++i) {
            const double s = static_cast<double>(j) / nv;
            const double x = us[i] / L;
            const double h = 0.8 + 0.7 * x + 0.15 * std::sin(2.4 * x);  // no reflection symmetry
            double v = s * h;
            if constexpr (!std::is_pointer_v<WarpV>) v = wv(v);
            V.row(j * (nu + 1) + i) << gamma[i].x(), gamma[i].y(), v;
        }
    }
    return TriangleMesh(std::move(V), grid.faces());
}

/// Icosphere with smooth seeded bumps; the fixed seed keeps the base shape
/// identical across pair seeds while removing its symmetries.
inline TriangleMesh bumpy_sphere(int level) {
    TriangleMesh s = make_icosphere(level);
    std::mt19937_64 rng(0xb0a7ULL);
    std::normal_distribution<double> g;
    std::vector<Eigen::Vector3d> centres;
    std::vector<double> amps;
    for (int b = 0; b < 7; ++b) {
        centres.push_back(Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized());
        amps.push_back(0.12 + 0.05 * b);
    }
    Vertices V = s.vertices();
    for (Index i = 0; i < V.rows(); ++i) {
        const Eigen::Vector3d p = V.row(i).transpose();
        double r = 1.0;
        for (std::size_t b = 0; b < centres.size(); ++b) r += amps[b] * std::exp(-(p - centres[b]).squaredNorm() / 0.18);
        V.row(i) *= r;
    }
    return TriangleMesh(V, s.faces());
}

inline TriangleMesh base_mesh(const SyntheticPairSpec& spec) {
    switch (spec.base) {
    case BaseShape::sphere: return bumpy_sphere(spec.resolution);
    case BaseShape::cylinder: return rolled_strip(spec.resolution, [](double) { return 0.5; });
    case BaseShape::plane: return rolled_strip(spec.resolution, [](double) { return 0.0; });
    }
    throw ConfigError("unknown base shape");
}

/// Welds vertex `drop` into `keep` and removes `drop`. Returns the map from old
/// to new vertex indices.
inline TriangleMesh weld(const TriangleMesh& mesh, int keep, int drop, std::vector<int>& old_to_new) {
    const Index n = mesh.num_vertices();
    old_to_new.assign(static_cast<std::size_t>(n), -1);
    Vertices V(n - 1, 3);
    int next = 0;
    for (Index i = 0; i < n; ++i) {
        if (i == drop) continue;
        old_to_new[i] = next;
        V.row(next++) = mesh.vertices().row(i);
    }
    old_to_new[drop] = old_to_new[keep];
    V.row(old_to_new[keep]) = 0.5 * (mesh.vertices().row(keep) + mesh.vertices().row(drop));
    Faces F = mesh.faces();
    for (Index f = 0; f < F.rows(); ++f)
        for (int c = 0; c < 3; ++c) F(f, c) = old_to_new[F(f, c)];
    return TriangleMesh(std::move(V), std::move(F));
}

/// Euclidean-nearest vertex pair that is far apart on the surface: its graph
/// distance is at least `shortcut` times its straight-line distance.
inline std::pair<int, int> nearest_distant_pair(const TriangleMesh& mesh, double shortcut = 4.0) {
    const EdgeGraph graph(mesh);
    const Index n = mesh.num_vertices();
    std::pair<int, int> best{-1, -1};
    double best_d = std::numeric_limits<double>::infinity();
    for (Index a = 0; a < n; ++a) {
        const auto dist = dijkstra(graph, static_cast<int>(a));
        for (Index b = a + 1; b < n; ++b) {
            const double d = (mesh.vertex(a) - mesh.vertex(b)).norm();
            if (d < best_d && dist[b] >= shortcut * d) {
                best_d = d;
                best = {static_cast<int>(a), static_cast<int>(b)};
            }
        }
    }
    if (best.first < 0) throw ConfigError("no vertex pair qualifies for welding");
    return best;
}

inline std::vector<int> seeded_permutation(Index n, std::uint64_t seed) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit uniform draw keeps the result independent
    // of the standard library's shuffle implementation.
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

/// Relabels N's vertices; gt is composed so it still points at the same vertices.
inline void permute_target(SyntheticPair& pair, std::uint64_t seed) {
    const auto order = seeded_permutation(pair.N.num_vertices(), seed);
    std::vector<int> inverse(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = static_cast<int>(i);
    pair.N = permute_vertices(pair.N, order);
    for (int& j : pair.gt.target_index) j = inverse[j];
}

} // namespace detail

/// Deterministic synthetic pair with its ground-truth map M -> N. Both meshes
/// are normalised to unit area.
inline SyntheticPair generate_pair(const SyntheticPairSpec& spec) {
    if (spec.resolution < 1) throw ConfigError("resolution must be positive");
    if (spec.base == BaseShape::sphere && spec.resolution > 6) throw ConfigError("sphere level above 6 is too large");
    if (spec.base != BaseShape::sphere && spec.resolution < 4) throw ConfigError("strip needs at least 4 columns");
    const bool strip_kind = spec.kind == PairKind::isometric_bend || spec.kind == PairKind::topological_glue;
    if (strip_kind && spec.base == BaseShape::sphere) {
        throw ConfigError(std::string(to_string(spec.kind)) + " needs a cylinder or plane base");
    }
    if (!(spec.noise >= 0.0)) throw ConfigError("noise must be non-negative");
    if (!(spec.strain >= 0.0 && spec.strain < 0.5)) throw ConfigError("strain must be in [0, 0.5)");

    SyntheticPair pair;
    std::mt19937_64 rng(spec.seed);
    const Index n = [&] {
        pair.M = detail::base_mesh(spec);
        return pair.M.num_vertices();
    }();
    HardCorrespondence identity;
    identity.target_index.resize(static_cast<std::size_t>(n));
    std::iota(identity.target_index.begin(), identity.target_index.end(), 0);
    pair.gt = identity;

    switch (spec.kind) {
    case PairKind::identity: pair.N = pair.M; break;
    case PairKind::permuted: pair.N = pair.M; break;
    case PairKind::rigid_noise: {
        std::normal_distribution<double> g;
        const Eigen::Vector3d axis = Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized();
        const double angle = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(rng);
        const Eigen::Matrix3d R = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
        double mean_edge = 0.0;
        const auto edges = unique_edges(pair.M);
        for (const auto& [a, b] : edges) mean_edge += (pair.M.vertex(a) - pair.M.vertex(b)).norm();
        mean_edge /= static_cast<double>(edges.size());
        Vertices V = pair.M.vertices() * R.transpose();
        for (Index i = 0; i < V.rows(); ++i)
            for (int c = 0; c < 3; ++c) V(i, c) += spec.noise * mean_edge * g(rng);
        V.rowwise() += Eigen::RowVector3d(g(rng), g(rng), g(rng));
        pair.N = TriangleMesh(std::move(V), pair.M.faces());
        break;
    }
    case PairKind::isometric_bend: {
        // S-shaped bend whose phase and sign vary with the seed.
        const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(rng);
        const double amp = spec.bend * std::uniform_real_distribution<double>(0.7, 1.3)(rng);
        // A smooth separable stretch of the flat domain (strain at most
        // `strain` along each axis) keeps the pair near- rather than exactly
        // isometric, so descriptors of corresponding points differ slightly.
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double su = spec.strain * (0.5 + 0.5 * unit(rng)), pu = 2.0 * M_PI * unit(rng);
        const double sv = spec.strain * (0.5 + 0.5 * unit(rng)), pv = 2.0 * M_PI * unit(rng);
        const double Lu = 3.0 / 2.0, Lv = 1.5;  // two periods along u, one along v
        auto wu = [=](double u) { return u + su * Lu / (2.0 * M_PI) * (std::sin(2.0 * M_PI * u / Lu + pu) - std::sin(pu)); };
        auto wv = [=](double v) { return v + sv * Lv / (2.0 * M_PI) * (std::sin(2.0 * M_PI * v / Lv + pv) - std::sin(pv)); };
        pair.N = detail::rolled_strip(
            spec.resolution, [amp, phase](double u) { return amp * std::sin(2.0 * M_PI * u / 3.0 + phase); }, wu, wv);
        if (spec.base == BaseShape::plane) pair.M = detail::rolled_strip(spec.resolution, [](double) { return 0.0; });
        break;
    }
    case PairKind::topological_glue: {
        // Curl the strip to ~95% of a full turn (with a little seeded
        // variation) so the two ends nearly touch, then weld once.
        const double turn = 2.0 * M_PI * std::uniform_real_distribution<double>(0.93, 0.97)(rng) / 3.0;
        const TriangleMesh curled = detail::rolled_strip(spec.resolution, [turn](double) { return turn; });
        const auto [keep, drop] = detail::nearest_distant_pair(curled);
        std::vector<int> old_to_new;
        pair.N = detail::weld(curled, keep, drop, old_to_new);
        pair.gt.target_index = old_to_new;
        break;
    }
    }
    pair.M = normalize_to_unit_area(pair.M);
    pair.N = normalize_to_unit_area(pair.N);
    if (spec.kind != PairKind::identity) detail::permute_target(pair, spec.seed ^ 0x5bd1e995ULL);
    return pair;
}

} // namespace syncdiff
