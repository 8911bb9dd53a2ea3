#pragma once

#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "syncdiff/mesh.hpp"

namespace syncdiff {

inline TriangleMesh make_tetrahedron() {
    Vertices V(4, 3);
    V << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
    Faces F(4, 3);
    F << 0, 1, 2, 0, 3, 1, 0, 2, 3, 1, 3, 2;
    return TriangleMesh(V, F);
}

inline TriangleMesh make_icosahedron() {
    const double p = (1.0 + std::sqrt(5.0)) / 2.0;
    Vertices V(12, 3);
    V << -1, p, 0, 1, p, 0, -1, -p, 0, 1, -p, 0,
         0, -1, p, 0, 1, p, 0, -1, -p, 0, 1, -p,
         p, 0, -1, p, 0, 1, -p, 0, -1, -p, 0, 1;
    Faces F(20, 3);
    F << 0, 11, 5, 0, 5, 1, 0, 1, 7, 0, 7, 10, 0, 10, 11,
         1, 5, 9, 5, 11, 4, 11, 10, 2, 10, 7, 6, 7, 1, 8,
         3, 9, 4, 3, 4, 2, 3, 2, 6, 3, 6, 8, 3, 8, 9,
         4, 9, 5, 2, 4, 11, 6, 2, 10, 8, 6, 7, 9, 8, 1;
    return TriangleMesh(V, F);
}

/// Loop-style 1:4 subdivision of the icosahedron projected to the unit sphere.
/// Level l has 10 * 4^l + 2 vertices.
inline TriangleMesh make_icosphere(int level) {
    TriangleMesh base = make_icosahedron();
    std::vector<Eigen::Vector3d> verts;
    for (Index i = 0; i < base.num_vertices(); ++i) verts.push_back(base.vertex(i).normalized());
    std::vector<std::array<int, 3>> faces;
    for (Index f = 0; f < base.num_faces(); ++f)
        faces.push_back({base.faces()(f, 0), base.faces()(f, 1), base.faces()(f, 2)});

    for (int l = 0; l < level; ++l) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            verts.push_back((0.5 * (verts[a] + verts[b])).normalized());
            const int id = static_cast<int>(verts.size()) - 1;
            midpoint.emplace(key, id);
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& t : faces) {
            const int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
            next.push_back({t[0], ab, ca});
            next.push_back({t[1], bc, ab});
            next.push_back({t[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }
    Vertices V(static_cast<Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) V.row(static_cast<Index>(i)) = verts[i].transpose();
    Faces F(static_cast<Index>(faces.size()), 3);
    for (std::size_t f = 0; f < faces.size(); ++f)
        for (int c = 0; c < 3; ++c) F(static_cast<Index>(f), c) = faces[f][c];
    return TriangleMesh(std::move(V), std::move(F));
}

/// Regular (nx+1) x (ny+1) grid over [0, width] x [0, height] in the z = 0 plane,
/// each cell split along alternating diagonals.
inline TriangleMesh make_grid(int nx, int ny, double width = 1.0, double height = 1.0) {
    Vertices V((nx + 1) * (ny + 1), 3);
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            V.row(j * (nx + 1) + i) << width * i / nx, height * j / ny, 0.0;
    Faces F(2 * nx * ny, 3);
    int f = 0;
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int a = j * (nx + 1) + i, b = a + 1, c = a + nx + 1, d = c + 1;
            if ((i + j) % 2 == 0) {
                F.row(f++) << a, b, d;
                F.row(f++) << a, d, c;
            } else {
                F.row(f++) << a, b, c;
                F.row(f++) << b, d, c;
            }
        }
    }
    return TriangleMesh(std::move(V), std::move(F));
}

} // namespace syncdiff
