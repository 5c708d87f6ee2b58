#pragma once

// Structured triangulations of the unit square (0,1)^2.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stokesoc {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Uniform triangulation of [0,1]^2: n x n grid squares, each split along the
// lower-left to upper-right diagonal into two counterclockwise triangles.
// The mesh is immutable after construction; h is reported as 1/n.
struct TriangleMesh {
  int n = 0;
  std::vector<Vec2> vertices;                // (n+1)^2 points, row-major
  std::vector<std::array<int, 3>> cells;     // 2 n^2 triangles
  std::vector<std::uint8_t> boundary_vertex; // 1 iff vertex on the boundary

  double h() const { return 1.0 / static_cast<double>(n); }
  int n_vertices() const { return static_cast<int>(vertices.size()); }
  int n_cells() const { return static_cast<int>(cells.size()); }
  int vertex_index(int i, int j) const { return j * (n + 1) + i; }
};

inline TriangleMesh build_unit_square_mesh(int n) {
  if (n < 1) throw std::invalid_argument("build_unit_square_mesh: n must be >= 1");
  TriangleMesh mesh;
  mesh.n = n;
  const int nv = (n + 1) * (n + 1);
  mesh.vertices.resize(nv);
  mesh.boundary_vertex.resize(nv);
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const int v = mesh.vertex_index(i, j);
      mesh.vertices[v] = {static_cast<double>(i) / n, static_cast<double>(j) / n};
      mesh.boundary_vertex[v] = (i == 0 || i == n || j == 0 || j == n) ? 1 : 0;
    }
  }
  mesh.cells.reserve(2 * n * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const int v00 = mesh.vertex_index(i, j);
      const int v10 = mesh.vertex_index(i + 1, j);
      const int v01 = mesh.vertex_index(i, j + 1);
      const int v11 = mesh.vertex_index(i + 1, j + 1);
      mesh.cells.push_back({v00, v10, v11}); // below the diagonal
      mesh.cells.push_back({v00, v11, v01}); // above the diagonal
    }
  }
  return mesh;
}

struct CellGeometry {
  // Affine map x = p0 + J * (xi, eta) from the reference triangle
  // {xi >= 0, eta >= 0, xi + eta <= 1} onto the cell.
  double jac[2][2];
  double inv_jac[2][2];
  double area;
  Vec2 p0;
};

inline CellGeometry cell_affine_map(const TriangleMesh& mesh, int cell) {
  if (cell < 0 || cell >= mesh.n_cells())
    throw std::out_of_range("cell_affine_map: cell index out of range");
  const auto& c = mesh.cells[cell];
  const Vec2 a = mesh.vertices[c[0]];
  const Vec2 b = mesh.vertices[c[1]];
  const Vec2 d = mesh.vertices[c[2]];
  CellGeometry g;
  g.p0 = a;
  g.jac[0][0] = b.x - a.x;
  g.jac[0][1] = d.x - a.x;
  g.jac[1][0] = b.y - a.y;
  g.jac[1][1] = d.y - a.y;
  const double det = g.jac[0][0] * g.jac[1][1] - g.jac[0][1] * g.jac[1][0];
  if (det <= 0.0)
    throw std::runtime_error("cell_affine_map: degenerate or inverted cell " + std::to_string(cell));
  g.area = 0.5 * det;
  g.inv_jac[0][0] = g.jac[1][1] / det;
  g.inv_jac[0][1] = -g.jac[0][1] / det;
  g.inv_jac[1][0] = -g.jac[1][0] / det;
  g.inv_jac[1][1] = g.jac[0][0] / det;
  return g;
}

// Fine-to-coarse cell parent lookup for nested uniform meshes
// (n_fine a multiple of n_coarse, identical diagonal direction).
inline int parent_cell(int fine_cell, int n_fine, int n_coarse) {
  if (n_fine % n_coarse != 0)
    throw std::invalid_argument("parent_cell: meshes are not nested");
  const int sq = fine_cell / 2;
  const bool upper = (fine_cell % 2) == 1;
  const int fi = sq % n_fine;
  const int fj = sq / n_fine;
  // barycenters: lower cell ((i + 2/3), (j + 1/3))/n, upper cell ((i + 1/3), (j + 2/3))/n
  const double third = 1.0 / 3.0;
  const double cx = (fi + (upper ? third : 2.0 * third)) / n_fine;
  const double cy = (fj + (upper ? 2.0 * third : third)) / n_fine;
  int ci = static_cast<int>(cx * n_coarse);
  int cj = static_cast<int>(cy * n_coarse);
  if (ci >= n_coarse) ci = n_coarse - 1;
  if (cj >= n_coarse) cj = n_coarse - 1;
  const double lx = cx * n_coarse - ci;
  const double ly = cy * n_coarse - cj;
  const bool coarse_upper = ly > lx;
  return 2 * (cj * n_coarse + ci) + (coarse_upper ? 1 : 0);
}

} // namespace stokesoc
