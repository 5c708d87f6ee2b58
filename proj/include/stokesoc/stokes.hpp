#pragma once

// dG(0) time stepping for the transient Stokes equation in velocity-pressure
// form, its dual (adjoint) sweep sharing the same factorization, and the
// stationary solve used for the Ritz-projection convergence benchmark.
//
// One slab of the dG(0) scheme is the symmetric saddle system over
// (u_m, p_m, lambda):
//
//   [ M + kA   -k B^T   0 ] [u]   [ M u_prev + F_m ]
//   [ -k B      0       c ] [p] = [ 0              ]
//   [  0        c^T     0 ] [l]   [ 0              ]
//
// where c enforces the zero-mean pressure through the scalar multiplier l.
// The continuity rows are scaled by k and negated to keep the matrix
// symmetric. On a uniform grid every slab shares one factorization.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "stokesoc/fem.hpp"
#include "stokesoc/mesh.hpp"
#include "stokesoc/sparse.hpp"
#include "stokesoc/timegrid.hpp"

namespace stokesoc {

struct StepOperator {
  int n_u = 0;
  int n_p = 0;
  int N = 0; // n_u + n_p + 1
  double k = 0.0;
  CsrMatrix saddle;
  Factorization fact;
  CsrMatrix scalar_mass; // spatial mass of one velocity component
  CsrMatrix divergence;  // B, for per-slab divergence residual checks
  std::vector<double> mean_vector;
  int n_scalar = 0;

  // y = M_u x (block-diagonal velocity mass)
  void apply_velocity_mass(const double* x, double* y) const {
    spmv(scalar_mass, x, y);
    spmv(scalar_mass, x + n_scalar, y + n_scalar);
  }
};

namespace stokes_detail {

inline void append_block(std::vector<Triplet>& trips, const CsrMatrix& a, int row0, int col0,
                         double scale) {
  for (int r = 0; r < a.n_rows; ++r)
    for (int kk = a.row_offsets[r]; kk < a.row_offsets[r + 1]; ++kk)
      trips.push_back({row0 + r, col0 + a.col_indices[kk], scale * a.values[kk]});
}

inline CsrMatrix build_saddle(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                              const CsrMatrix& velocity_block, const CsrMatrix& b,
                              const std::vector<double>& c, double constraint_scale) {
  const int n_u = sp.n_u, n_p = sp.n_p;
  const int N = n_u + n_p + 1;
  std::vector<Triplet> trips;
  trips.reserve(velocity_block.values.size() + 2 * b.values.size() + 2 * c.size());
  append_block(trips, velocity_block, 0, 0, 1.0);
  append_block(trips, b, n_u, 0, -constraint_scale);
  const CsrMatrix bt = csr_transpose(b);
  append_block(trips, bt, 0, n_u, -constraint_scale);
  for (int i = 0; i < n_p; ++i) {
    trips.push_back({n_u + i, N - 1, c[i]});
    trips.push_back({N - 1, n_u + i, c[i]});
  }
  (void)mesh;
  return assemble_csr(N, N, std::move(trips));
}

} // namespace stokes_detail

inline StepOperator build_step_operator(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                                        double k) {
  if (!(k > 0.0)) throw std::invalid_argument("build_step_operator: need k > 0");
  StepOperator op;
  op.n_u = sp.n_u;
  op.n_p = sp.n_p;
  op.N = sp.n_u + sp.n_p + 1;
  op.k = k;
  op.n_scalar = sp.n_scalar;
  op.scalar_mass = assemble_scalar_mass(mesh, sp);
  op.divergence = assemble_divergence(mesh, sp);
  op.mean_vector = assemble_pressure_mean(mesh, sp);

  const CsrMatrix stiff = assemble_scalar_stiffness(mesh, sp);
  // velocity block M + kA per component
  std::vector<Triplet> vb;
  vb.reserve(2 * op.scalar_mass.values.size());
  for (int comp = 0; comp < 2; ++comp) {
    const int shift = comp * sp.n_scalar;
    for (int r = 0; r < op.scalar_mass.n_rows; ++r)
      for (int kk = op.scalar_mass.row_offsets[r]; kk < op.scalar_mass.row_offsets[r + 1]; ++kk)
        vb.push_back({shift + r, shift + op.scalar_mass.col_indices[kk], op.scalar_mass.values[kk]});
    for (int r = 0; r < stiff.n_rows; ++r)
      for (int kk = stiff.row_offsets[r]; kk < stiff.row_offsets[r + 1]; ++kk)
        vb.push_back({shift + r, shift + stiff.col_indices[kk], k * stiff.values[kk]});
  }
  const CsrMatrix velocity_block = assemble_csr(sp.n_u, sp.n_u, std::move(vb));
  op.saddle = stokes_detail::build_saddle(mesh, sp, velocity_block, op.divergence, op.mean_vector, k);
  op.fact = Factorization(op.saddle);
  return op;
}

struct StepSolveScratch {
  std::vector<double> rhs;
  std::vector<double> sol;
};

// Solves one saddle step with velocity right-hand side rhs_u; returns the
// velocity part in u (and optionally pressure / multiplier).
inline void step_solve(const StepOperator& op, const std::vector<double>& rhs_u,
                       StepSolveScratch& scratch, double* u, double* p = nullptr,
                       double* lambda = nullptr) {
  scratch.rhs.assign(op.N, 0.0);
  std::copy(rhs_u.begin(), rhs_u.end(), scratch.rhs.begin());
  scratch.sol.resize(op.N);
  op.fact.solve(scratch.rhs.data(), scratch.sol.data());
  std::copy(scratch.sol.begin(), scratch.sol.begin() + op.n_u, u);
  if (p) std::copy(scratch.sol.begin() + op.n_u, scratch.sol.begin() + op.n_u + op.n_p, p);
  if (lambda) *lambda = scratch.sol[op.N - 1];
}

struct SweepReport {
  double max_divergence_residual = 0.0; // max_m ||B u_m||_inf / max(1, ||u_m||_2)
};

// Forward dG(0) sweep: marching m = 1..M with u_0 = 0 and per-slab load
// functionals F_m. Loads must already carry their time integration.
inline SpaceTimeField solve_state(const StepOperator& op, const TimeGrid& grid,
                                  const std::vector<std::vector<double>>& loads,
                                  SpaceTimeField* pressures = nullptr, SweepReport* report = nullptr,
                                  double divergence_tol = 1e-9) {
  if (static_cast<int>(loads.size()) != grid.M)
    throw std::invalid_argument("solve_state: need one load per slab");
  if (grid.is_uniform == false)
    throw std::invalid_argument("solve_state: non-uniform grids require per-slab operators");
  SpaceTimeField u(grid, SpaceTimeField::Kind::velocity, op.n_u);
  if (pressures) *pressures = SpaceTimeField(grid, SpaceTimeField::Kind::pressure, op.n_p);
  StepSolveScratch scratch;
  std::vector<double> rhs_u(op.n_u), prev(op.n_u, 0.0), div(op.n_p);
  double worst = 0.0;
  for (int m = 0; m < grid.M; ++m) {
    op.apply_velocity_mass(prev.data(), rhs_u.data());
    for (int i = 0; i < op.n_u; ++i) rhs_u[i] += loads[m][i];
    step_solve(op, rhs_u, scratch, u.block(m), pressures ? pressures->block(m) : nullptr);
    spmv(op.divergence, u.block(m), div.data());
    double dmax = 0.0, unorm = 0.0;
    for (double v : div) dmax = std::max(dmax, std::abs(v));
    for (int i = 0; i < op.n_u; ++i) unorm += u.block(m)[i] * u.block(m)[i];
    unorm = std::sqrt(unorm);
    const double rel = dmax / std::max(1.0, unorm);
    worst = std::max(worst, rel);
    if (rel > divergence_tol)
      throw std::runtime_error("solve_state: discrete divergence residual " + std::to_string(rel) +
                               " exceeds tolerance at slab " + std::to_string(m + 1));
    std::copy(u.block(m), u.block(m) + op.n_u, prev.begin());
  }
  if (report) report->max_divergence_residual = worst;
  return u;
}

// Dual sweep: marching m = M..1 with z_{M+1} = 0; same step matrix, so the
// factorization is shared. Realizes the exact transpose of solve_state.
inline SpaceTimeField solve_adjoint(const StepOperator& op, const TimeGrid& grid,
                                    const std::vector<std::vector<double>>& loads) {
  if (static_cast<int>(loads.size()) != grid.M)
    throw std::invalid_argument("solve_adjoint: need one load per slab");
  SpaceTimeField z(grid, SpaceTimeField::Kind::velocity, op.n_u);
  StepSolveScratch scratch;
  std::vector<double> rhs_u(op.n_u), next(op.n_u, 0.0);
  for (int m = grid.M - 1; m >= 0; --m) {
    op.apply_velocity_mass(next.data(), rhs_u.data());
    for (int i = 0; i < op.n_u; ++i) rhs_u[i] += loads[m][i];
    step_solve(op, rhs_u, scratch, z.block(m));
    std::copy(z.block(m), z.block(m) + op.n_u, next.begin());
  }
  return z;
}

// Per-slab values of the constraint functional G_w: value_m = g_w^T u_m.
inline std::vector<double> gw_trajectory(const SpaceTimeField& u, const std::vector<double>& g_w) {
  if (static_cast<int>(g_w.size()) != u.block_size)
    throw std::invalid_argument("gw_trajectory: weight vector size mismatch");
  std::vector<double> out(u.grid.M, 0.0);
  for (int m = 0; m < u.grid.M; ++m) {
    double s = 0.0;
    const double* b = u.block(m);
    for (int i = 0; i < u.block_size; ++i) s += g_w[i] * b[i];
    out[m] = s;
  }
  return out;
}

struct StationarySolution {
  std::vector<double> velocity;
  std::vector<double> pressure;
  double multiplier = 0.0;
};

// Discrete stationary Stokes problem with zero-mean pressure.
inline StationarySolution solve_stationary(const TriangleMesh& mesh, const DiscreteSpaces& sp,
                                           const VelocityFn& f, int load_degree = 6) {
  const CsrMatrix stiff2 = assemble_velocity_stiffness(mesh, sp);
  const CsrMatrix b = assemble_divergence(mesh, sp);
  const std::vector<double> c = assemble_pressure_mean(mesh, sp);
  const CsrMatrix saddle = stokes_detail::build_saddle(mesh, sp, stiff2, b, c, 1.0);
  Factorization fact(saddle);
  const std::vector<double> load = assemble_weight_vector(mesh, sp, f, load_degree);
  std::vector<double> rhs(saddle.n_rows, 0.0);
  std::copy(load.begin(), load.end(), rhs.begin());
  const std::vector<double> sol = fact.solve(rhs);
  std::vector<double> residual = spmv(saddle, sol);
  double rnorm = 0.0, bnorm = 0.0;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    rnorm += (residual[i] - rhs[i]) * (residual[i] - rhs[i]);
    bnorm += rhs[i] * rhs[i];
  }
  if (bnorm > 0.0 && std::sqrt(rnorm) > 1e-10 * std::sqrt(bnorm))
    throw std::runtime_error("solve_stationary: residual exceeds tolerance");
  StationarySolution out;
  out.velocity.assign(sol.begin(), sol.begin() + sp.n_u);
  out.pressure.assign(sol.begin() + sp.n_u, sol.begin() + sp.n_u + sp.n_p);
  out.multiplier = sol.back();
  return out;
}

} // namespace stokesoc
