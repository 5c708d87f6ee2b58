#pragma once

// MINI velocity / P1 pressure / P0 control spaces on TriangleMesh and the
// assembly of every spatial matrix and vector the discretization needs.
//
// Velocity dofs are numbered per component: first the interior P1 vertex
// dofs, then one cubic bubble per cell. Homogeneous Dirichlet data are
// enforced by eliminating the boundary vertex dofs from the numbering.
// The *_full variants keep the boundary P1 dofs (used for kernel and
// partition-of-unity checks).

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "stokesoc/mesh.hpp"
#include "stokesoc/quadrature.hpp"
#include "stokesoc/sparse.hpp"

namespace stokesoc {

using VelocityFn = std::function<void(double x, double y, double out[2])>;
using VelocityGradFn = std::function<void(double x, double y, double out[4])>; // du1dx,du1dy,du2dx,du2dy
using ScalarFn = std::function<double(double x, double y)>;
using SpaceTimeFn = std::function<void(double t, double x, double y, double out[2])>;

struct DiscreteSpaces {
  int n = 0;
  int n_vertices = 0;
  int n_cells = 0;
  int n_interior = 0;    // interior vertices
  int n_scalar = 0;      // interior vertices + cells (one velocity component)
  int n_scalar_full = 0; // all vertices + cells
  int n_u = 0;           // 2 * n_scalar
  int n_p = 0;           // all vertices
  int n_q = 0;           // 2 * n_cells
  std::vector<int> interior_index; // vertex -> interior dof or -1

  int velocity_dof_vertex(int comp, int vertex) const {
    const int k = interior_index[vertex];
    return k < 0 ? -1 : comp * n_scalar + k;
  }
  int velocity_dof_bubble(int comp, int cell) const {
    return comp * n_scalar + n_interior + cell;
  }
  int scalar_full_dof_vertex(int vertex) const { return vertex; }
  int scalar_full_dof_bubble(int cell) const { return n_vertices + cell; }
  int control_dof(int comp, int cell) const { return comp * n_cells + cell; }
};

inline DiscreteSpaces build_spaces(const TriangleMesh& mesh) {
  DiscreteSpaces sp;
  sp.n = mesh.n;
  sp.n_vertices = mesh.n_vertices();
  sp.n_cells = mesh.n_cells();
  sp.interior_index.assign(sp.n_vertices, -1);
  for (int v = 0; v < sp.n_vertices; ++v)
    if (!mesh.boundary_vertex[v]) sp.interior_index[v] = sp.n_interior++;
  sp.n_scalar = sp.n_interior + sp.n_cells;
  sp.n_scalar_full = sp.n_vertices + sp.n_cells;
  sp.n_u = 2 * sp.n_scalar;
  sp.n_p = sp.n_vertices;
  sp.n_q = 2 * sp.n_cells;
  return sp;
}

inline int comp_dof(const DiscreteSpaces& sp, int comp, int scalar_dof) {
  return comp * sp.n_scalar + scalar_dof;
}

namespace fem_detail {

// Values and reference gradients of the 4 local scalar MINI functions
// (3 vertex hats + bubble 27*l1*l2*l3, normalized to 1 at the barycenter).
struct LocalBasis {
  double val[4];
  double ref_grad[4][2];
};

inline LocalBasis local_basis(const QuadraturePoint& qp) {
  LocalBasis b;
  const double l1 = qp.lambda[0], l2 = qp.lambda[1], l3 = qp.lambda[2];
  b.val[0] = l1;
  b.val[1] = l2;
  b.val[2] = l3;
  b.val[3] = 27.0 * l1 * l2 * l3;
  const double gl[3][2] = {{-1.0, -1.0}, {1.0, 0.0}, {0.0, 1.0}};
  for (int i = 0; i < 3; ++i) {
    b.ref_grad[i][0] = gl[i][0];
    b.ref_grad[i][1] = gl[i][1];
  }
  b.ref_grad[3][0] = 27.0 * (l2 * l3 * gl[0][0] + l1 * l3 * gl[1][0] + l1 * l2 * gl[2][0]);
  b.ref_grad[3][1] = 27.0 * (l2 * l3 * gl[0][1] + l1 * l3 * gl[1][1] + l1 * l2 * gl[2][1]);
  return b;
}

// physical gradient = J^{-T} * reference gradient
inline void physical_grad(const CellGeometry& g, const double ref[2], double out[2]) {
  out[0] = g.inv_jac[0][0] * ref[0] + g.inv_jac[1][0] * ref[1];
  out[1] = g.inv_jac[0][1] * ref[0] + g.inv_jac[1][1] * ref[1];
}

inline Vec2 map_point(const CellGeometry& g, const QuadraturePoint& qp) {
  const double xi = qp.lambda[1], eta = qp.lambda[2];
  return {g.p0.x + g.jac[0][0] * xi + g.jac[0][1] * eta,
          g.p0.y + g.jac[1][0] * xi + g.jac[1][1] * eta};
}

// Local scalar dof -> (full numbering, eliminated numbering or -1).
inline void local_dofs(const TriangleMesh& mesh, const DiscreteSpaces& sp, int cell, int full[4],
                       int interior[4]) {
  const auto& c = mesh.cells[cell];
  for (int a = 0; a < 3; ++a) {
    full[a] = sp.scalar_full_dof_vertex(c[a]);
    interior[a] = sp.interior_index[c[a]];
  }
  full[3] = sp.scalar_full_dof_bubble(cell);
  interior[3] = sp.n_interior + cell;
}

enum class ScalarForm { Mass, Stiffness };

inline void local_scalar_matrix(const CellGeometry& g, const QuadratureRule& rule, ScalarForm form,
                                double local[4][4]) {
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) local[a][b] = 0.0;
  for (const auto& qp : rule.points) {
    const LocalBasis lb = local_basis(qp);
    const double w = 2.0 * g.area * qp.weight;
    if (form == ScalarForm::Mass) {
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) local[a][b] += w * lb.val[a] * lb.val[b];
    } else {
      double grad[4][2];
      for (int a = 0; a < 4; ++a) physical_grad(g, lb.ref_grad[a], grad[a]);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          local[a][b] += w * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
    }
  }
}

inline CsrMatrix assemble_scalar(const TriangleMesh& mesh, const DiscreteSpaces& sp, ScalarForm form,
                                 bool eliminated) {
  const QuadratureRule rule = quadrature_rule(6);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.n_cells()) * 16);
  const int dim = eliminated ? sp.n_scalar : sp.n_scalar_full;
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry g = cell_affine_map(mesh, cell);
    double local[4][4];
    local_scalar_matrix(g, rule, form, local);
    int full[4], interior[4];
    local_dofs(mesh, sp, cell, full, interior);
    for (int a = 0; a < 4; ++a) {
      const int ra = eliminated ? interior[a] : full[a];
      if (ra < 0) continue;
      for (int b = 0; b < 4; ++b) {
        const int cb = eliminated ? interior[b] : full[b];
        if (cb < 0) continue;
        trips.push_back({ra, cb, local[a][b]});
      }
    }
  }
  return assemble_csr(dim, dim, std::move(trips));
}

inline CsrMatrix duplicate_block_diagonal(const CsrMatrix& s) {
  CsrMatrix m;
  m.n_rows = 2 * s.n_rows;
  m.n_cols = 2 * s.n_cols;
  m.row_offsets.reserve(m.n_rows + 1);
  m.col_indices.reserve(2 * s.values.size());
  m.values.reserve(2 * s.values.size());
  m.row_offsets.push_back(0);
  for (int comp = 0; comp < 2; ++comp) {
    const int col_shift = comp * s.n_cols;
    for (int r = 0; r < s.n_rows; ++r) {
      for (int k = s.row_offsets[r]; k < s.row_offsets[r + 1]; ++k) {
        m.col_indices.push_back(s.col_indices[k] + col_shift);
        m.values.push_back(s.values[k]);
      }
      m.row_offsets.push_back(static_cast<int>(m.values.size()));
    }
  }
  return m;
}

} // namespace fem_detail

// Scalar (one velocity component) matrices; the eliminated variants drop
// boundary vertex dofs.
inline CsrMatrix assemble_scalar_mass(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  return fem_detail::assemble_scalar(mesh, sp, fem_detail::ScalarForm::Mass, true);
}
inline CsrMatrix assemble_scalar_mass_full(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  return fem_detail::assemble_scalar(mesh, sp, fem_detail::ScalarForm::Mass, false);
}
inline CsrMatrix assemble_scalar_stiffness(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  return fem_detail::assemble_scalar(mesh, sp, fem_detail::ScalarForm::Stiffness, true);
}
inline CsrMatrix assemble_scalar_stiffness_full(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  return fem_detail::assemble_scalar(mesh, sp, fem_detail::ScalarForm::Stiffness, false);
}

inline CsrMatrix assemble_velocity_mass(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  return fem_detail::duplicate_block_diagonal(assemble_scalar_mass(mesh, sp));
}
inline CsrMatrix assemble_velocity_stiffness(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  return fem_detail::duplicate_block_diagonal(assemble_scalar_stiffness(mesh, sp));
}

// Divergence matrix with entries (div phi_j, psi_i), psi_i the P1 pressure
// basis over all vertices. Rows n_p, columns the eliminated velocity space.
inline CsrMatrix assemble_divergence(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  const QuadratureRule rule = quadrature_rule(6);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.n_cells()) * 24);
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry g = cell_affine_map(mesh, cell);
    int full[4], interior[4];
    fem_detail::local_dofs(mesh, sp, cell, full, interior);
    const auto& cv = mesh.cells[cell];
    double local[3][4][2]; // pressure vertex a, scalar basis b, derivative component
    for (auto& pa : local)
      for (auto& pb : pa) pb[0] = pb[1] = 0.0;
    for (const auto& qp : rule.points) {
      const fem_detail::LocalBasis lb = fem_detail::local_basis(qp);
      const double w = 2.0 * g.area * qp.weight;
      double grad[4][2];
      for (int b = 0; b < 4; ++b) fem_detail::physical_grad(g, lb.ref_grad[b], grad[b]);
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 4; ++b) {
          local[a][b][0] += w * lb.val[a] * grad[b][0];
          local[a][b][1] += w * lb.val[a] * grad[b][1];
        }
    }
    for (int a = 0; a < 3; ++a) {
      const int row = cv[a];
      for (int b = 0; b < 4; ++b) {
        for (int comp = 0; comp < 2; ++comp) {
          const int col = interior[b] < 0 ? -1 : comp * sp.n_scalar + interior[b];
          if (col < 0) continue;
          trips.push_back({row, col, local[a][b][comp]});
        }
      }
    }
  }
  return assemble_csr(sp.n_p, sp.n_u, std::move(trips));
}

// Full-space variant (columns over both components of the un-eliminated
// scalar space), used by kernel tests.
inline CsrMatrix assemble_divergence_full(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  const QuadratureRule rule = quadrature_rule(6);
  std::vector<Triplet> trips;
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry g = cell_affine_map(mesh, cell);
    int full[4], interior[4];
    fem_detail::local_dofs(mesh, sp, cell, full, interior);
    const auto& cv = mesh.cells[cell];
    for (const auto& qp : rule.points) {
      const fem_detail::LocalBasis lb = fem_detail::local_basis(qp);
      const double w = 2.0 * g.area * qp.weight;
      double grad[4][2];
      for (int b = 0; b < 4; ++b) fem_detail::physical_grad(g, lb.ref_grad[b], grad[b]);
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 4; ++b)
          for (int comp = 0; comp < 2; ++comp)
            trips.push_back({cv[a], comp * sp.n_scalar_full + full[b], w * lb.val[a] * grad[b][comp]});
    }
  }
  return assemble_csr(sp.n_p, 2 * sp.n_scalar_full, std::move(trips));
}

// c_i = integral of the pressure basis function psi_i; sums to |Omega| = 1.
inline std::vector<double> assemble_pressure_mean(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  std::vector<double> c(sp.n_p, 0.0);
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry g = cell_affine_map(mesh, cell);
    for (int a = 0; a < 3; ++a) c[mesh.cells[cell][a]] += g.area / 3.0;
  }
  return c;
}

// Columns indexed by control dofs (component-major, one per cell); entries
// are integrals of the incident velocity basis functions over the cell:
// A/3 for each interior vertex hat, 9A/20 for the bubble.
inline CsrMatrix assemble_control_coupling(const TriangleMesh& mesh, const DiscreteSpaces& sp) {
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.n_cells()) * 8);
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry g = cell_affine_map(mesh, cell);
    const double vert_val = g.area / 3.0;
    const double bub_val = 9.0 * g.area / 20.0;
    for (int comp = 0; comp < 2; ++comp) {
      const int col = sp.control_dof(comp, cell);
      for (int a = 0; a < 3; ++a) {
        const int row = sp.velocity_dof_vertex(comp, mesh.cells[cell][a]);
        if (row >= 0) trips.push_back({row, col, vert_val});
      }
      trips.push_back({sp.velocity_dof_bubble(comp, cell), col, bub_val});
    }
  }
  return assemble_csr(sp.n_u, sp.n_q, std::move(trips));
}

// Diagonal of the spatial P0 control mass: the cell area, per component.
inline std::vector<double> assemble_control_mass(const TriangleMesh& mesh) {
  const int nc = mesh.n_cells();
  std::vector<double> d(2 * nc);
  for (int cell = 0; cell < nc; ++cell) {
    const double a = cell_affine_map(mesh, cell).area;
    d[cell] = a;
    d[nc + cell] = a;
  }
  return d;
}

// (g_w)_i = integral of phi_i . w over Omega.
inline std::vector<double> assemble_weight_vector(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                                                  const VelocityFn& w, int degree = 6) {
  const QuadratureRule rule = quadrature_rule(degree);
  std::vector<double> g(sp.n_u, 0.0);
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry geo = cell_affine_map(mesh, cell);
    int full[4], interior[4];
    fem_detail::local_dofs(mesh, sp, cell, full, interior);
    for (const auto& qp : rule.points) {
      const fem_detail::LocalBasis lb = fem_detail::local_basis(qp);
      const Vec2 x = fem_detail::map_point(geo, qp);
      double wv[2];
      w(x.x, x.y, wv);
      const double wq = 2.0 * geo.area * qp.weight;
      for (int b = 0; b < 4; ++b) {
        if (interior[b] < 0) continue;
        for (int comp = 0; comp < 2; ++comp)
          g[comp * sp.n_scalar + interior[b]] += wq * lb.val[b] * wv[comp];
      }
    }
  }
  return g;
}

// F_i = int_{t0}^{t1} int_Omega f . phi_i, Gauss in time (split at the
// evaluator's breakpoints) times the given space rule.
inline std::vector<double> assemble_timeslab_load(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                                                  const SpaceTimeFn& f, double t0, double t1,
                                                  const std::vector<double>& time_breakpoints = {},
                                                  int degree = 6, int time_gauss = 3) {
  if (!(t0 < t1)) throw std::invalid_argument("assemble_timeslab_load: need t0 < t1");
  const QuadratureRule rule = quadrature_rule(degree);
  const auto tp = time_points(t0, t1, time_breakpoints, time_gauss);
  std::vector<double> F(sp.n_u, 0.0);
  std::vector<fem_detail::LocalBasis> basis;
  basis.reserve(rule.points.size());
  for (const auto& qp : rule.points) basis.push_back(fem_detail::local_basis(qp));
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry geo = cell_affine_map(mesh, cell);
    int full[4], interior[4];
    fem_detail::local_dofs(mesh, sp, cell, full, interior);
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const Vec2 x = fem_detail::map_point(geo, rule.points[q]);
      const double wq = 2.0 * geo.area * rule.points[q].weight;
      double acc[2] = {0.0, 0.0};
      for (const auto& g : tp) {
        double fv[2];
        f(g.t, x.x, x.y, fv);
        acc[0] += g.w * fv[0];
        acc[1] += g.w * fv[1];
      }
      for (int b = 0; b < 4; ++b) {
        if (interior[b] < 0) continue;
        const double v = wq * basis[q].val[b];
        F[comp_dof(sp, 0, interior[b])] += v * acc[0];
        F[comp_dof(sp, 1, interior[b])] += v * acc[1];
      }
    }
  }
  return F;
}

// Evaluates the discrete MINI velocity field on a cell at a reference point.
inline void evaluate_velocity(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                              const std::vector<double>& coeffs, int cell,
                              const fem_detail::LocalBasis& lb, const int interior[4], double out[2]) {
  out[0] = out[1] = 0.0;
  for (int b = 0; b < 4; ++b) {
    if (interior[b] < 0) continue;
    out[0] += coeffs[sp.n_scalar * 0 + interior[b]] * lb.val[b];
    out[1] += coeffs[sp.n_scalar * 1 + interior[b]] * lb.val[b];
  }
  (void)mesh;
}

inline double l2_error_velocity(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                                const std::vector<double>& coeffs, const VelocityFn& exact,
                                int degree = 6) {
  const QuadratureRule rule = quadrature_rule(degree);
  double acc = 0.0;
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry geo = cell_affine_map(mesh, cell);
    int full[4], interior[4];
    fem_detail::local_dofs(mesh, sp, cell, full, interior);
    for (const auto& qp : rule.points) {
      const fem_detail::LocalBasis lb = fem_detail::local_basis(qp);
      const Vec2 x = fem_detail::map_point(geo, qp);
      double uh[2];
      evaluate_velocity(mesh, sp, coeffs, cell, lb, interior, uh);
      double ue[2] = {0.0, 0.0};
      if (exact) exact(x.x, x.y, ue);
      const double dx = uh[0] - ue[0], dy = uh[1] - ue[1];
      acc += 2.0 * geo.area * qp.weight * (dx * dx + dy * dy);
    }
  }
  return std::sqrt(acc);
}

inline double h1_seminorm_error_velocity(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                                         const std::vector<double>& coeffs,
                                         const VelocityGradFn& exact_grad, int degree = 6) {
  const QuadratureRule rule = quadrature_rule(degree);
  double acc = 0.0;
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry geo = cell_affine_map(mesh, cell);
    int full[4], interior[4];
    fem_detail::local_dofs(mesh, sp, cell, full, interior);
    for (const auto& qp : rule.points) {
      const fem_detail::LocalBasis lb = fem_detail::local_basis(qp);
      double grad[4][2];
      for (int b = 0; b < 4; ++b) fem_detail::physical_grad(geo, lb.ref_grad[b], grad[b]);
      double gh[4] = {0.0, 0.0, 0.0, 0.0}; // du1dx, du1dy, du2dx, du2dy
      for (int b = 0; b < 4; ++b) {
        if (interior[b] < 0) continue;
        gh[0] += coeffs[sp.n_scalar * 0 + interior[b]] * grad[b][0];
        gh[1] += coeffs[sp.n_scalar * 0 + interior[b]] * grad[b][1];
        gh[2] += coeffs[sp.n_scalar * 1 + interior[b]] * grad[b][0];
        gh[3] += coeffs[sp.n_scalar * 1 + interior[b]] * grad[b][1];
      }
      const Vec2 x = fem_detail::map_point(geo, qp);
      double ge[4] = {0.0, 0.0, 0.0, 0.0};
      if (exact_grad) exact_grad(x.x, x.y, ge);
      double s = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double d = gh[i] - ge[i];
        s += d * d;
      }
      acc += 2.0 * geo.area * qp.weight * s;
    }
  }
  return std::sqrt(acc);
}

inline double l2_error_pressure(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                                const std::vector<double>& coeffs, const ScalarFn& exact,
                                int degree = 6) {
  const QuadratureRule rule = quadrature_rule(degree);
  double acc = 0.0;
  for (int cell = 0; cell < mesh.n_cells(); ++cell) {
    const CellGeometry geo = cell_affine_map(mesh, cell);
    const auto& cv = mesh.cells[cell];
    for (const auto& qp : rule.points) {
      double ph = 0.0;
      for (int a = 0; a < 3; ++a) ph += coeffs[cv[a]] * qp.lambda[a];
      const Vec2 x = fem_detail::map_point(geo, qp);
      const double d = ph - (exact ? exact(x.x, x.y) : 0.0);
      acc += 2.0 * geo.area * qp.weight * d * d;
    }
  }
  return std::sqrt(acc);
}

// Nodal interpolant: P1 part from vertex values, bubble coefficients zero.
inline std::vector<double> interpolate_velocity(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                                                const VelocityFn& f) {
  std::vector<double> coeffs(sp.n_u, 0.0);
  for (int v = 0; v < mesh.n_vertices(); ++v) {
    const int k = sp.interior_index[v];
    if (k < 0) continue;
    double val[2];
    f(mesh.vertices[v].x, mesh.vertices[v].y, val);
    coeffs[comp_dof(sp, 0, k)] = val[0];
    coeffs[comp_dof(sp, 1, k)] = val[1];
  }
  return coeffs;
}

} // namespace stokesoc
