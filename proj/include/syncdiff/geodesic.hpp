#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "syncdiff/mesh.hpp"

namespace syncdiff {

/// Vertex adjacency in CSR form with Euclidean edge lengths.
struct EdgeGraph {
    std::vector<int> offsets;
    std::vector<int> neighbours;
    std::vector<double> lengths;

    explicit EdgeGraph(const TriangleMesh& mesh) {
        const auto n = static_cast<std::size_t>(mesh.num_vertices());
        const auto edges = unique_edges(mesh);
        std::vector<int> degree(n, 0);
        for (const auto& [a, b] : edges) {
            ++degree[a];
            ++degree[b];
        }
        offsets.assign(n + 1, 0);
        for (std::size_t i = 0; i < n; ++i) offsets[i + 1] = offsets[i] + degree[i];
        neighbours.resize(static_cast<std::size_t>(offsets[n]));
        lengths.resize(neighbours.size());
        std::vector<int> fill(offsets.begin(), offsets.end() - 1);
        for (const auto& [a, b] : edges) {
            const double len = (mesh.vertex(a) - mesh.vertex(b)).norm();
            neighbours[fill[a]] = b;
            lengths[fill[a]++] = len;
            neighbours[fill[b]] = a;
            lengths[fill[b]++] = len;
        }
    }

    std::size_t size() const noexcept { return offsets.size() - 1; }
};

/// Single-source shortest-path distances on the edge graph.
struct GeodesicField {
    int source = 0;
    std::vector<double> distances;
};

/// Plain Dijkstra; unreachable vertices keep +inf.
inline std::vector<double> dijkstra(const EdgeGraph& graph, int source) {
    std::vector<double> dist(graph.size(), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[source] = 0.0;
    queue.emplace(0.0, source);
    while (!queue.empty()) {
        const auto [d, v] = queue.top();
        queue.pop();
        if (d > dist[v]) continue;
        for (int e = graph.offsets[v]; e < graph.offsets[v + 1]; ++e) {
            const int w = graph.neighbours[e];
            const double nd = d + graph.lengths[e];
            if (nd < dist[w]) {
                dist[w] = nd;
                queue.emplace(nd, w);
            }
        }
    }
    return dist;
}

namespace detail {
inline void check_reachable(const std::vector<double>& dist, const TriangleMesh& mesh, int source) {
    for (std::size_t v = 0; v < dist.size(); ++v) {
        if (!std::isfinite(dist[v])) {
            const auto labels = connected_components(mesh);
            std::size_t size = 0;
            for (int l : labels) size += (l == labels[v]);
            throw MeshError("vertex " + std::to_string(v) + " is unreachable from vertex " +
                            std::to_string(source) + ": it lies in component " +
                            std::to_string(labels[v]) + " (" + std::to_string(size) + " vertices)");
        }
    }
}
} // namespace detail

/// Graph geodesic distances from `source`. Throws MeshError on a disconnected mesh.
inline GeodesicField geodesic_distances(const TriangleMesh& mesh, int source) {
    if (source < 0 || source >= mesh.num_vertices()) {
        throw MeshError("geodesic source " + std::to_string(source) + " out of range");
    }
    const EdgeGraph graph(mesh);
    GeodesicField field{source, dijkstra(graph, source)};
    detail::check_reachable(field.distances, mesh, source);
    return field;
}

/// Dense all-pairs graph distances (row = source).
inline Eigen::MatrixXd all_pairs_geodesics(const TriangleMesh& mesh) {
    const EdgeGraph graph(mesh);
    const Index n = mesh.num_vertices();
    Eigen::MatrixXd D(n, n);
    for (Index s = 0; s < n; ++s) {
        const auto dist = dijkstra(graph, static_cast<int>(s));
        if (s == 0) detail::check_reachable(dist, mesh, 0);
        for (Index t = 0; t < n; ++t) D(s, t) = dist[t];
    }
    return D;
}

} // namespace syncdiff
