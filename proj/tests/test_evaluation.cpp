#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "syncdiff/evaluation.hpp"
#include "syncdiff/spectral.hpp"
#include "test_support.hpp"

using namespace syncdiff;

namespace {

HardCorrespondence identity_map(Index n) {
    HardCorrespondence m;
    for (Index i = 0; i < n; ++i) m.target_index.push_back(static_cast<int>(i));
    return m;
}

HardCorrespondence random_map(Index n, Index target, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> u(0, static_cast<int>(target) - 1);
    HardCorrespondence m;
    for (Index i = 0; i < n; ++i) m.target_index.push_back(u(rng));
    return m;
}

} // namespace

TEST(GeodesicError, ExactMatchIsZero) {
    const TriangleMesh mesh = normalize_to_unit_area(fixtures::jittered_sphere(2, 0.05, 1));
    const auto id = identity_map(mesh.num_vertices());
    auto prof = geodesic_error(id, id, mesh);
    EXPECT_EQ(prof.mean, 0.0);
    pck_and_auc(prof, 0.1);
    EXPECT_EQ(prof.auc, 1.0);
    for (double p : prof.pck) EXPECT_EQ(p, 1.0);
}

TEST(GeodesicError, OneEdgeOff) {
    const TriangleMesh mesh = normalize_to_unit_area(fixtures::jittered_sphere(2, 0.05, 2));
    const auto edges = unique_edges(mesh);
    const auto [a, b] = edges[5];
    auto pred = identity_map(mesh.num_vertices());
    pred.target_index[a] = b;
    const auto prof = geodesic_error(pred, identity_map(mesh.num_vertices()), mesh);
    EXPECT_NEAR(prof.per_vertex_errors[a], (mesh.vertex(a) - mesh.vertex(b)).norm(), 1e-12);
    EXPECT_NEAR(prof.mean * mesh.num_vertices(), prof.per_vertex_errors[a], 1e-12);
}

TEST(GeodesicError, MatchesPerQueryDijkstra) {
    const TriangleMesh target = fixtures::jittered_grid(7, 6, 0.05, 3);
    const double s = 1.0 / std::sqrt(surface_area(target));
    const auto pred = random_map(30, target.num_vertices(), 4), gt = random_map(30, target.num_vertices(), 5);
    const auto prof = geodesic_error(pred, gt, target);
    double sum = 0.0;
    for (int i = 0; i < 30; ++i) {
        const auto field = geodesic_distances(target, gt.target_index[i]);
        EXPECT_EQ(prof.per_vertex_errors[i], field.distances[pred.target_index[i]] * s);
        sum += prof.per_vertex_errors[i];
    }
    EXPECT_NEAR(prof.mean, sum / 30, 1e-12);
}

TEST(GeodesicError, ScaleInvariant) {
    const TriangleMesh target = fixtures::jittered_grid(6, 6, 0.05, 6);
    const TriangleMesh big(target.vertices() * 4.5, target.faces());
    const auto pred = random_map(40, target.num_vertices(), 7), gt = random_map(40, target.num_vertices(), 8);
    const auto a = geodesic_error(pred, gt, target), b = geodesic_error(pred, gt, big);
    for (std::size_t i = 0; i < a.per_vertex_errors.size(); ++i)
        EXPECT_NEAR(a.per_vertex_errors[i], b.per_vertex_errors[i], 1e-8);
}

TEST(GeodesicError, RejectsBadInput) {
    const TriangleMesh target = make_icosphere(1);
    auto pred = identity_map(42);
    pred.target_index[3] = 99;
    EXPECT_THROW(geodesic_error(pred, identity_map(42), target), ConfigError);
    EXPECT_THROW(geodesic_error(identity_map(41), identity_map(42), target), ConfigError);
}

TEST(Pck, HandTrapezoid) {
    ErrorProfile prof;
    prof.per_vertex_errors = {0, 0, 0, 1, 1, 1, 1, 1, 1, 1};
    pck_and_auc(prof, 0.1, 11);
    for (double p : prof.pck) EXPECT_DOUBLE_EQ(p, 0.3);
    EXPECT_NEAR(prof.auc, 0.3, 1e-15);

    // Errors at 0 and 0.05 with three samples: PCK = [0.5, 1, 1], area = 0.05 * 0.75 + 0.05 * 1.
    prof.per_vertex_errors = {0.0, 0.05};
    pck_and_auc(prof, 0.1, 3);
    EXPECT_NEAR(prof.auc, 0.875, 1e-15);
    EXPECT_THROW(pck_and_auc(prof, 0.0), ConfigError);
    EXPECT_THROW(pck_and_auc(prof, 0.1, 1), ConfigError);
}

TEST(Pck, MonotoneAndBounded) {
    std::mt19937 rng(9);
    std::exponential_distribution<double> ex(20.0);
    for (int trial = 0; trial < 20; ++trial) {
        ErrorProfile prof;
        for (int i = 0; i < 200; ++i) prof.per_vertex_errors.push_back(ex(rng));
        const double worst = *std::max_element(prof.per_vertex_errors.begin(), prof.per_vertex_errors.end());
        pck_and_auc(prof, worst * 1.01, 51);
        for (std::size_t s = 1; s < prof.pck.size(); ++s) EXPECT_GE(prof.pck[s], prof.pck[s - 1]);
        EXPECT_EQ(prof.pck.back(), 1.0);
        EXPECT_GE(prof.auc, 0.0);
        EXPECT_LE(prof.auc, 1.0);
    }
}

TEST(Pck, QuadratureStable) {
    std::mt19937 rng(10);
    std::exponential_distribution<double> ex(30.0);
    ErrorProfile a;
    for (int i = 0; i < 1000; ++i) a.per_vertex_errors.push_back(ex(rng));
    ErrorProfile b = a;
    pck_and_auc(a, 0.2, 101);
    pck_and_auc(b, 0.2, 201);
    EXPECT_LT(std::abs(a.auc - b.auc), 1e-3);
}

TEST(Coverage, Cases) {
    EXPECT_EQ(coverage(identity_map(50), 50), 1.0);
    EXPECT_EQ(coverage(HardCorrespondence{std::vector<int>(50, 7)}, 50), 1.0 / 50);
    const auto m = random_map(80, 60, 11);
    const std::set<int> distinct(m.target_index.begin(), m.target_index.end());
    EXPECT_EQ(coverage(m, 60), static_cast<double>(distinct.size()) / 60);
}

TEST(Smoothness, MatchesDirichletForms) {
    const TriangleMesh A = fixtures::jittered_grid(5, 4, 0.05, 12);
    const TriangleMesh B = fixtures::jittered_grid(4, 5, 0.05, 13);
    const Operators ops = build_operators(A);
    const Eigen::MatrixXd VA = A.vertices();
    double edge_sum = 0.0;
    for (const auto& [i, j] : unique_edges(A)) edge_sum -= ops.stiffness.coeff(i, j) * (VA.row(i) - VA.row(j)).squaredNorm();
    EXPECT_NEAR(map_smoothness(identity_map(30), VA, ops.stiffness), edge_sum, 1e-12);
    EXPECT_NEAR(map_smoothness(HardCorrespondence{std::vector<int>(30, 3)}, B.vertices(), ops.stiffness), 0.0, 1e-12);

    const auto m = random_map(30, 30, 14);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(30, 30);
    for (int i = 0; i < 30; ++i) P(i, m.target_index[i]) = 1.0;
    const double hard = map_smoothness(m, B.vertices(), ops.stiffness);
    EXPECT_NEAR(hard, map_smoothness(P, B.vertices(), ops.stiffness), 1e-12 * hard);
    EXPECT_GE(hard, -1e-10);
}
