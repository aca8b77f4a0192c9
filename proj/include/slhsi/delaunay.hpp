#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

namespace slhsi {

using TriangleIndices = std::array<int, 3>;

/// Bowyer-Watson Delaunay triangulation; triangles are counter-clockwise in a
/// y-up frame. Exact ties (cocircular points) are broken by a tiny deterministic
/// perturbation. Throws DegenerateTriangulation when fewer than three
/// non-collinear points are given.
std::vector<TriangleIndices> delaunay_triangulate(const std::vector<Eigen::Vector2d>& points);

}  // namespace slhsi
