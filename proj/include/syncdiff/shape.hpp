#pragma once

#include "syncdiff/spectral.hpp"

namespace syncdiff {

/// A mesh with its operators and truncated spectral basis.
struct Shape {
    TriangleMesh mesh;
    Operators ops;
    SpectralBasis basis;

    Index size() const noexcept { return mesh.num_vertices(); }
};

inline Shape prepare_shape(TriangleMesh mesh, Index k, const EigenOptions& opt = {}) {
    Shape s;
    s.ops = build_operators(mesh);
    s.basis = eigendecompose(s.ops, std::min<Index>(k, mesh.num_vertices()), opt);
    s.mesh = std::move(mesh);
    return s;
}

} // namespace syncdiff
