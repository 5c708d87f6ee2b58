#pragma once

// Independent correctness oracle for tiny instances: materializes the
// reduced problem densely (dense LU time stepping, explicit Hessian and
// constraint rows), enumerates candidate active-set patterns, solves each
// equality-constrained QP with dense linear algebra, and returns the unique
// candidate satisfying the full KKT system. Exactness follows from strict
// convexity. Entirely separate from the PDAS/MINRES solution path.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "stokesoc/ocp.hpp"

namespace stokesoc {

struct OraclePoint {
  std::vector<double> q;  // control coefficients, slab-major
  std::vector<double> mu; // per-slab multipliers
  std::vector<std::uint8_t> state_active;
  std::vector<std::uint8_t> upper_active;
  std::vector<std::uint8_t> lower_active;
};

struct OracleLimits {
  int max_state_slabs = 5;
  int max_total_dofs = 80;   // dense Hessian dimension
  int max_bound_pool = 14;   // enumerated control dofs
  double kkt_tol = 1e-9;
};

namespace oracle_detail {

// dense forward marching: columns of S * M^uq
inline Eigen::MatrixXd dense_state_map(const OcpOperators& ops) {
  const auto& sp = ops.spaces();
  const auto& step = ops.step();
  const int M = ops.M(), n_q = ops.n_q(), n_u = sp.n_u, N = step.N;
  Eigen::MatrixXd saddle = Eigen::MatrixXd::Zero(N, N);
  for (int r = 0; r < N; ++r)
    for (int k = step.saddle.row_offsets[r]; k < step.saddle.row_offsets[r + 1]; ++k)
      saddle(r, step.saddle.col_indices[k]) += step.saddle.values[k];
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(saddle);
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(n_u, n_u);
  for (int comp = 0; comp < 2; ++comp) {
    const int s = comp * sp.n_scalar;
    for (int r = 0; r < step.scalar_mass.n_rows; ++r)
      for (int k = step.scalar_mass.row_offsets[r]; k < step.scalar_mass.row_offsets[r + 1]; ++k)
        mass(s + r, s + step.scalar_mass.col_indices[k]) += step.scalar_mass.values[k];
  }
  Eigen::MatrixXd coupling = Eigen::MatrixXd::Zero(n_u, n_q);
  for (int r = 0; r < ops.coupling().n_rows; ++r)
    for (int k = ops.coupling().row_offsets[r]; k < ops.coupling().row_offsets[r + 1]; ++k)
      coupling(r, ops.coupling().col_indices[k]) += ops.coupling().values[k];

  // states(:, j) stacked over slabs for unit control j
  Eigen::MatrixXd states = Eigen::MatrixXd::Zero(M * n_u, M * n_q);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
  for (int j = 0; j < M * n_q; ++j) {
    const int mj = j / n_q, cj = j % n_q;
    Eigen::VectorXd prev = Eigen::VectorXd::Zero(n_u);
    for (int m = 0; m < M; ++m) {
      rhs.setZero();
      rhs.head(n_u) = mass * prev;
      if (m == mj) rhs.head(n_u) += ops.k() * coupling.col(cj);
      const Eigen::VectorXd sol = lu.solve(rhs);
      states.block(m * n_u, j, n_u, 1) = sol.head(n_u);
      prev = sol.head(n_u);
    }
  }
  return states;
}

} // namespace oracle_detail

inline OraclePoint enumerate_active_sets_oracle(const OcpOperators& ops,
                                                const OracleLimits& limits = {}) {
  const OcpSpec& spec = ops.spec();
  const auto& sp = ops.spaces();
  const int M = ops.M(), n_q = ops.n_q(), n_u = sp.n_u;
  const int nc = n_q / 2;
  const int dim = M * n_q;
  if (M > limits.max_state_slabs || dim > limits.max_total_dofs)
    throw std::invalid_argument("enumerate_active_sets_oracle: instance too large");

  const Eigen::MatrixXd states = oracle_detail::dense_state_map(ops);

  // mass-weighted pieces
  Eigen::VectorXd mqq(dim);
  for (int m = 0; m < M; ++m)
    for (int i = 0; i < n_q; ++i) mqq(m * n_q + i) = ops.k() * ops.control_volumes()[i];
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(n_u, n_u);
  for (int comp = 0; comp < 2; ++comp) {
    const int s = comp * sp.n_scalar;
    const auto& sm = ops.step().scalar_mass;
    for (int r = 0; r < sm.n_rows; ++r)
      for (int k = sm.row_offsets[r]; k < sm.row_offsets[r + 1]; ++k)
        mass(s + r, s + sm.col_indices[k]) += sm.values[k];
  }
  // H = alpha M^qq + U^T (k M) U ; rhs = U^T d ; T = W U
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd trows = Eigen::MatrixXd::Zero(M, dim);
  Eigen::VectorXd gw(n_u);
  for (int i = 0; i < n_u; ++i) gw(i) = ops.weight_vector()[i];
  for (int m = 0; m < M; ++m) {
    const Eigen::MatrixXd um = states.block(m * n_u, 0, n_u, dim);
    hess += ops.k() * um.transpose() * (mass * um);
    Eigen::VectorXd dm(n_u);
    for (int i = 0; i < n_u; ++i) dm(i) = ops.desired_loads()[m][i];
    rhs += um.transpose() * dm;
    trows.row(m) = (um.transpose() * gw).transpose();
  }
  hess += mqq.asDiagonal();

  // candidate pool for control bounds: dofs whose unconstrained solution
  // violates or nearly violates a finite bound
  const Eigen::VectorXd q_unc = hess.ldlt().solve(rhs);
  std::vector<int> pool;
  std::vector<int> pool_side; // +1 upper, -1 lower
  if (spec.has_bounds()) {
    const double qscale = std::max(q_unc.cwiseAbs().maxCoeff(), 1e-300);
    for (int idx = 0; idx < dim; ++idx) {
      const int comp = (idx % n_q) / nc;
      const double margin = 0.05 * qscale;
      if (std::isfinite(spec.q_upper[comp]) && q_unc(idx) > spec.q_upper[comp] - margin) {
        pool.push_back(idx);
        pool_side.push_back(+1);
      } else if (std::isfinite(spec.q_lower[comp]) && q_unc(idx) < spec.q_lower[comp] + margin) {
        pool.push_back(idx);
        pool_side.push_back(-1);
      }
    }
    if (static_cast<int>(pool.size()) > limits.max_bound_pool)
      throw std::invalid_argument("enumerate_active_sets_oracle: bound-active pool too large");
  }

  const double tol = limits.kkt_tol;
  const bool constrained = spec.has_state_constraint();
  const unsigned long n_state_patterns = constrained ? (1ul << M) : 1ul;
  const unsigned long n_bound_patterns = 1ul << pool.size();

  for (unsigned long smask = 0; smask < n_state_patterns; ++smask) {
    for (unsigned long bmask = 0; bmask < n_bound_patterns; ++bmask) {
      std::vector<int> act;
      for (int m = 0; m < M; ++m)
        if (smask & (1ul << m)) act.push_back(m);
      std::vector<std::uint8_t> upper(dim, 0), lower(dim, 0), bound_active(dim, 0);
      Eigen::VectorXd qb = Eigen::VectorXd::Zero(dim);
      for (std::size_t p = 0; p < pool.size(); ++p) {
        if (!(bmask & (1ul << p))) continue;
        const int idx = pool[p];
        const int comp = (idx % n_q) / nc;
        bound_active[idx] = 1;
        if (pool_side[p] > 0) {
          upper[idx] = 1;
          qb(idx) = spec.q_upper[comp];
        } else {
          lower[idx] = 1;
          qb(idx) = spec.q_lower[comp];
        }
      }
      std::vector<int> free;
      for (int idx = 0; idx < dim; ++idx)
        if (!bound_active[idx]) free.push_back(idx);
      if (free.empty()) continue;

      const int nf = static_cast<int>(free.size()), na = static_cast<int>(act.size());
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nf + na, nf + na);
      Eigen::VectorXd b(nf + na);
      for (int a = 0; a < nf; ++a) {
        for (int bb = 0; bb < nf; ++bb) kkt(a, bb) = hess(free[a], free[bb]);
        for (int c = 0; c < na; ++c) {
          kkt(a, nf + c) = trows(act[c], free[a]);
          kkt(nf + c, a) = trows(act[c], free[a]);
        }
        b(a) = rhs(free[a]) - hess.row(free[a]).dot(qb);
      }
      for (int c = 0; c < na; ++c) b(nf + c) = spec.beta - trows.row(act[c]).dot(qb);
      const Eigen::VectorXd sol = kkt.fullPivLu().solve(b);
      if (!sol.allFinite()) continue;

      Eigen::VectorXd q = qb;
      for (int a = 0; a < nf; ++a) q(free[a]) = sol(a);
      Eigen::VectorXd mu = Eigen::VectorXd::Zero(M);
      for (int c = 0; c < na; ++c) mu(act[c]) = sol(nf + c);

      // full KKT check
      const Eigen::VectorXd tau = trows * q;
      bool ok = true;
      if (constrained)
        for (int m = 0; m < M && ok; ++m) {
          if (tau(m) > spec.beta + tol) ok = false;
          if (mu(m) < -tol) ok = false;
        }
      // stationarity residual and bound multiplier signs
      Eigen::VectorXd resid = hess * q - rhs;
      if (constrained) resid += trows.transpose() * mu;
      for (int idx = 0; idx < dim && ok; ++idx) {
        const int comp = (idx % n_q) / nc;
        const double eta = -resid(idx) / mqq(idx); // bound multiplier density
        if (bound_active[idx]) {
          if (upper[idx] && eta < -tol) ok = false;
          if (lower[idx] && eta > tol) ok = false;
        } else {
          if (std::abs(resid(idx)) > tol * std::max(1.0, rhs.cwiseAbs().maxCoeff())) ok = false;
          if (q(idx) > spec.q_upper[comp] + tol || q(idx) < spec.q_lower[comp] - tol) ok = false;
        }
      }
      if (!ok) continue;

      OraclePoint out;
      out.q.assign(q.data(), q.data() + dim);
      out.mu.assign(mu.data(), mu.data() + M);
      out.state_active.assign(M, 0);
      for (int c = 0; c < na; ++c) out.state_active[act[c]] = 1;
      out.upper_active = upper;
      out.lower_active = lower;
      return out;
    }
  }
  throw std::runtime_error("enumerate_active_sets_oracle: no KKT-consistent candidate found");
}

} // namespace stokesoc
