#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "syncdiff/descriptors.hpp"
#include "test_support.hpp"

using namespace syncdiff;

namespace {

SpectralBasis basis_of(const TriangleMesh& mesh, Index k) {
    return eigendecompose(build_operators(mesh), k);
}

double max_column_spread(const Eigen::MatrixXd& values) {
    double worst = 0.0;
    for (Index j = 0; j < values.cols(); ++j) {
        const auto col = values.col(j);
        worst = std::max(worst, (col.maxCoeff() - col.minCoeff()) / col.mean());
    }
    return worst;
}

TriangleMesh rigidly_moved(const TriangleMesh& mesh) {
    const Eigen::Matrix3d R =
        Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    Vertices V = (mesh.vertices() * R.transpose()).rowwise() + Eigen::RowVector3d(0.3, -1.2, 2.0);
    return TriangleMesh(V, mesh.faces());
}

} // namespace

TEST(Hks, NonNegativeAndShaped) {
    const auto basis = basis_of(fixtures::jittered_sphere(2, 0.05, 3), 30);
    const auto hks = compute_hks(basis, 16);
    EXPECT_EQ(hks.kind, DescriptorKind::hks);
    EXPECT_EQ(hks.values.rows(), 162);
    EXPECT_EQ(hks.dim(), 16);
    EXPECT_TRUE(hks.values.allFinite());
    EXPECT_GE(hks.values.minCoeff(), 0.0);
}

TEST(Hks, LongTimeLimitIsZeroMode) {
    const auto basis = basis_of(fixtures::jittered_sphere(2, 0.05, 3), 30);
    Eigen::VectorXd t(1);
    t << 1e4 / basis.eigenvalues(1);
    const Eigen::VectorXd col = hks_at_times(basis, t).col(0);
    const Eigen::VectorXd phi0_sq = basis.eigenvectors.col(0).array().square();
    EXPECT_LT((col - phi0_sq).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((col.maxCoeff() - col.minCoeff()) / col.mean(), 1e-8);
}

TEST(Hks, NeedsNonzeroEigenvalue) {
    const auto basis = basis_of(make_icosphere(1), 1);
    EXPECT_THROW(compute_hks(basis, 4), ConfigError);
    EXPECT_THROW(compute_hks(basis_of(make_icosphere(1), 4), 0), ConfigError);
}

// Closed eigenspaces of the round sphere: 1, 4, 9, 16, 25 modes.
TEST(Hks, CoarseSphereNearlyConstant) {
    const auto basis = basis_of(make_icosphere(2), 25);
    EXPECT_LT(max_column_spread(compute_hks(basis, 32).values), 0.02);
}

// Narrow energy bands resolve the small splitting of each eigenspace on the
// icosphere, so WKS needs the finer sphere to stay under the bound.
TEST(Wks, CoarseSphereNearlyConstant) {
    const auto basis = basis_of(make_icosphere(3), 16);
    EXPECT_LT(max_column_spread(compute_wks(basis, 32).values), 0.02);
}

TEST(Wks, NormalisedNonNegativeFinite) {
    const auto wks = compute_wks(basis_of(fixtures::jittered_sphere(2, 0.05, 4), 40), 128);
    EXPECT_EQ(wks.dim(), 128);
    EXPECT_TRUE(wks.values.allFinite());
    EXPECT_GE(wks.values.minCoeff(), 0.0);
    for (Index j = 0; j < wks.dim(); ++j) EXPECT_NEAR(wks.values.col(j).norm(), 1.0, 1e-12);
}

TEST(Wks, PermutedCopyPermutesRows) {
    const TriangleMesh mesh = fixtures::jittered_sphere(2, 0.05, 5);
    const auto order = fixtures::random_permutation(static_cast<int>(mesh.num_vertices()), 9);
    const auto a = compute_wks(basis_of(mesh, 40), 64).values;
    const auto b = compute_wks(basis_of(permute_vertices(mesh, order), 40), 64).values;
    double worst = 0.0;
    for (Index i = 0; i < b.rows(); ++i) worst = std::max(worst, (b.row(i) - a.row(order[i])).cwiseAbs().maxCoeff());
    EXPECT_LT(worst, 1e-8);
}

TEST(Descriptors, RigidMotionInvariant) {
    const TriangleMesh mesh = fixtures::jittered_sphere(2, 0.05, 6);
    const auto ba = basis_of(mesh, 40), bb = basis_of(rigidly_moved(mesh), 40);
    EXPECT_LT((compute_wks(ba, 64).values - compute_wks(bb, 64).values).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((compute_hks(ba, 16).values - compute_hks(bb, 16).values).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Descriptors, ScaleInvariantAfterNormalisation) {
    const TriangleMesh mesh = normalize_to_unit_area(fixtures::jittered_sphere(2, 0.05, 7));
    const TriangleMesh big(mesh.vertices() * 3.7, mesh.faces());
    const auto ba = basis_of(mesh, 40), bb = basis_of(normalize_to_unit_area(big), 40);
    EXPECT_LT((compute_wks(ba, 64).values - compute_wks(bb, 64).values).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((compute_hks(ba, 16).values - compute_hks(bb, 16).values).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Wks, DisconnectedSpectrumRejected) {
    Vertices V(6, 3);
    V << 0, 0, 0, 1, 0, 0, 0, 1, 0, 5, 0, 0, 6, 0, 0, 5, 1, 0;
    Faces F(2, 3);
    F << 0, 1, 2, 3, 4, 5;
    const auto basis = basis_of(TriangleMesh(V, F), 5);
    EXPECT_THROW(compute_wks(basis, 8), MeshError);
}

TEST(Wks, SingleEnergyAndTinyBudget) {
    const auto basis = basis_of(fixtures::jittered_sphere(1, 0.05, 2), 3);
    const auto wks = compute_wks(basis, 1);
    EXPECT_EQ(wks.dim(), 1);
    EXPECT_TRUE(wks.values.allFinite());
    EXPECT_THROW(compute_wks(basis_of(make_icosphere(1), 2), 4), ConfigError);
}

TEST(Descriptors, XyzAndCsv) {
    const TriangleMesh tet = make_tetrahedron();
    const auto xyz = xyz_descriptor(tet);
    EXPECT_EQ(xyz.dim(), 3);
    EXPECT_EQ(xyz.values, Eigen::MatrixXd(tet.vertices()));

    const auto path = std::filesystem::temp_directory_path() / "syncdiff_desc.csv";
    write_descriptor_csv(xyz, path);
    std::ifstream in(path);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2);
    }
    EXPECT_EQ(rows, 4);
    std::filesystem::remove(path);
}
