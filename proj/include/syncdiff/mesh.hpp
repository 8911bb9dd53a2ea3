#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "syncdiff/error.hpp"

namespace syncdiff {

using Index = Eigen::Index;
using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3>;

/// Triangle mesh with vertex positions and ordered face triples.
/// Face indices are checked against the vertex count on construction.
class TriangleMesh {
public:
    TriangleMesh() = default;

    TriangleMesh(Vertices vertices, Faces faces)
        : vertices_(std::move(vertices)), faces_(std::move(faces)) {
        const Index n = vertices_.rows();
        for (Index f = 0; f < faces_.rows(); ++f) {
            for (int c = 0; c < 3; ++c) {
                const int v = faces_(f, c);
                if (v < 0 || v >= n) {
                    throw MeshError("face " + std::to_string(f) + " references vertex " +
                                    std::to_string(v) + " but the mesh has " +
                                    std::to_string(n) + " vertices");
                }
            }
        }
    }

    const Vertices& vertices() const noexcept { return vertices_; }
    const Faces& faces() const noexcept { return faces_; }
    Index num_vertices() const noexcept { return vertices_.rows(); }
    Index num_faces() const noexcept { return faces_.rows(); }

    Eigen::Vector3d vertex(Index i) const { return vertices_.row(i).transpose(); }

    friend bool operator==(const TriangleMesh& a, const TriangleMesh& b) {
        return a.vertices_.rows() == b.vertices_.rows() && a.faces_.rows() == b.faces_.rows() &&
               a.vertices_ == b.vertices_ && a.faces_ == b.faces_;
    }

private:
    Vertices vertices_;
    Faces faces_;
};

inline double face_area(const TriangleMesh& mesh, Index f) {
    const auto& F = mesh.faces();
    const Eigen::Vector3d a = mesh.vertex(F(f, 0));
    const Eigen::Vector3d b = mesh.vertex(F(f, 1));
    const Eigen::Vector3d c = mesh.vertex(F(f, 2));
    return 0.5 * (b - a).cross(c - a).norm();
}

inline double surface_area(const TriangleMesh& mesh) {
    double total = 0.0;
    for (Index f = 0; f < mesh.num_faces(); ++f) total += face_area(mesh, f);
    return total;
}

/// Undirected edges (i < j) in sorted order.
inline std::vector<std::pair<int, int>> unique_edges(const TriangleMesh& mesh) {
    std::vector<std::pair<int, int>> edges;
    edges.reserve(static_cast<std::size_t>(mesh.num_faces()) * 3);
    const auto& F = mesh.faces();
    for (Index f = 0; f < F.rows(); ++f) {
        for (int c = 0; c < 3; ++c) {
            int a = F(f, c), b = F(f, (c + 1) % 3);
            if (a == b) continue;
            if (a > b) std::swap(a, b);
            edges.emplace_back(a, b);
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

/// Vertex-to-component labels over the face connectivity. Isolated vertices
/// form their own component.
inline std::vector<int> connected_components(const TriangleMesh& mesh, int* num_components = nullptr) {
    const Index n = mesh.num_vertices();
    std::vector<int> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (const auto& [a, b] : unique_edges(mesh)) {
        const int ra = find(a), rb = find(b);
        if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    std::vector<int> label(static_cast<std::size_t>(n), -1);
    std::vector<int> root_label(static_cast<std::size_t>(n), -1);
    int count = 0;
    for (Index v = 0; v < n; ++v) {
        const int r = find(static_cast<int>(v));
        if (root_label[r] < 0) root_label[r] = count++;
        label[v] = root_label[r];
    }
    if (num_components) *num_components = count;
    return label;
}

enum class MeshIssueCode {
    repeated_vertex_in_face,
    degenerate_face,
    non_manifold_edge,
    disconnected,
    empty_mesh,
};

inline const char* to_string(MeshIssueCode code) {
    switch (code) {
    case MeshIssueCode::repeated_vertex_in_face: return "repeated_vertex_in_face";
    case MeshIssueCode::degenerate_face: return "degenerate_face";
    case MeshIssueCode::non_manifold_edge: return "non_manifold_edge";
    case MeshIssueCode::disconnected: return "disconnected";
    case MeshIssueCode::empty_mesh: return "empty_mesh";
    }
    return "unknown";
}

struct MeshIssue {
    MeshIssueCode code;
    std::string detail;
};

/// Faces whose area falls below this fraction of the total area are degenerate.
/// Equivalent to an absolute threshold after unit-area normalisation.
inline constexpr double degenerate_area_threshold = 1e-12;

/// Checks the mesh invariants. An empty report means the mesh is usable by
/// every downstream stage.
inline std::vector<MeshIssue> validate_mesh(const TriangleMesh& mesh) {
    std::vector<MeshIssue> issues;
    if (mesh.num_vertices() == 0 || mesh.num_faces() == 0) {
        issues.push_back({MeshIssueCode::empty_mesh, "mesh has no vertices or no faces"});
        return issues;
    }

    const auto& F = mesh.faces();
    const double total = surface_area(mesh);
    for (Index f = 0; f < F.rows(); ++f) {
        if (F(f, 0) == F(f, 1) || F(f, 1) == F(f, 2) || F(f, 0) == F(f, 2)) {
            issues.push_back({MeshIssueCode::repeated_vertex_in_face,
                              "face " + std::to_string(f) + " repeats a vertex"});
            continue;
        }
        if (!(face_area(mesh, f) > degenerate_area_threshold * total)) {
            issues.push_back({MeshIssueCode::degenerate_face,
                              "face " + std::to_string(f) + " has (relative) area below 1e-12"});
        }
    }

    std::map<std::pair<int, int>, int> edge_faces;
    for (Index f = 0; f < F.rows(); ++f) {
        for (int c = 0; c < 3; ++c) {
            int a = F(f, c), b = F(f, (c + 1) % 3);
            if (a == b) continue;
            if (a > b) std::swap(a, b);
            ++edge_faces[{a, b}];
        }
    }
    for (const auto& [edge, count] : edge_faces) {
        if (count > 2) {
            issues.push_back({MeshIssueCode::non_manifold_edge,
                              "edge (" + std::to_string(edge.first) + "," +
                                  std::to_string(edge.second) + ") is shared by " +
                                  std::to_string(count) + " faces"});
        }
    }

    int components = 0;
    connected_components(mesh, &components);
    if (components > 1) {
        issues.push_back({MeshIssueCode::disconnected,
                          "mesh has " + std::to_string(components) + " connected components"});
    }
    return issues;
}

/// Uniformly scales the mesh about its vertex centroid so that the total
/// surface area becomes one.
inline TriangleMesh normalize_to_unit_area(const TriangleMesh& mesh) {
    const double area = surface_area(mesh);
    if (!(area > 0.0) || !std::isfinite(area)) {
        throw MeshError("cannot normalise a mesh with zero or non-finite surface area");
    }
    const double scale = 1.0 / std::sqrt(area);
    const Eigen::RowVector3d centroid = mesh.vertices().colwise().mean();
    Vertices v = (mesh.vertices().rowwise() - centroid) * scale;
    v.rowwise() += centroid;
    return TriangleMesh(std::move(v), mesh.faces());
}

/// Applies a vertex relabelling: new vertex `i` is old vertex `order[i]`.
inline TriangleMesh permute_vertices(const TriangleMesh& mesh, const std::vector<int>& order) {
    const Index n = mesh.num_vertices();
    if (static_cast<Index>(order.size()) != n) throw MeshError("permutation size mismatch");
    std::vector<int> inverse(static_cast<std::size_t>(n), -1);
    Vertices v(n, 3);
    for (Index i = 0; i < n; ++i) {
        const int old = order[static_cast<std::size_t>(i)];
        if (old < 0 || old >= n || inverse[old] != -1) throw MeshError("order is not a permutation");
        inverse[old] = static_cast<int>(i);
        v.row(i) = mesh.vertices().row(old);
    }
    Faces f = mesh.faces();
    for (Index r = 0; r < f.rows(); ++r)
        for (int c = 0; c < 3; ++c) f(r, c) = inverse[f(r, c)];
    return TriangleMesh(std::move(v), std::move(f));
}

/// 64-bit FNV-1a over the raw vertex and face buffers. Used to key caches.
inline std::uint64_t mesh_hash(const TriangleMesh& mesh) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&h](const void* data, std::size_t bytes) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    const std::int64_t n = mesh.num_vertices(), m = mesh.num_faces();
    mix(&n, sizeof n);
    mix(&m, sizeof m);
    mix(mesh.vertices().data(), sizeof(double) * static_cast<std::size_t>(mesh.vertices().size()));
    mix(mesh.faces().data(), sizeof(int) * static_cast<std::size_t>(mesh.faces().size()));
    return h;
}

} // namespace syncdiff
