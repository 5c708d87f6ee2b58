#pragma once

// Optimal-control layer: control-space projections, the reduced-Hessian
// operator, the PDAS outer loop over state and control active sets, the
// MINRES inner solves with the block-diagonal Schur preconditioner, and
// KKT verification.
//
// Control coefficients are raw cell/slab values; the space-time control mass
// is diagonal with entries k_m * |K|. The reduced objective gradient and all
// saddle blocks act on L2(I x Omega) functionals, so the assembled system is
// exactly symmetric through the forward/adjoint duality of the dG(0) sweeps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stokesoc/fem.hpp"
#include "stokesoc/mesh.hpp"
#include "stokesoc/sparse.hpp"
#include "stokesoc/stokes.hpp"
#include "stokesoc/timegrid.hpp"

namespace stokesoc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct OcpSpec {
  double alpha = 1.0;
  double beta = 1.0; // +inf disables the state constraint
  std::array<double, 2> q_lower = {-kInf, -kInf};
  std::array<double, 2> q_upper = {kInf, kInf};
  VelocityFn weight;
  int weight_quad_degree = 6;
  SpaceTimeFn desired_state;
  std::vector<double> desired_breakpoints;
  double T = 1.0;

  bool has_bounds() const {
    return std::isfinite(q_lower[0]) || std::isfinite(q_lower[1]) || std::isfinite(q_upper[0]) ||
           std::isfinite(q_upper[1]);
  }
  bool has_state_constraint() const { return std::isfinite(beta); }

  void validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("OcpSpec: alpha must be positive");
    if (!(beta > 0.0)) throw std::invalid_argument("OcpSpec: beta must be positive");
    for (int c = 0; c < 2; ++c)
      if (!(q_lower[c] < q_upper[c]))
        throw std::invalid_argument("OcpSpec: q_lower must be componentwise below q_upper");
    if (!weight) throw std::invalid_argument("OcpSpec: weight evaluator missing");
    if (!desired_state) throw std::invalid_argument("OcpSpec: desired-state evaluator missing");
    if (!(T > 0.0)) throw std::invalid_argument("OcpSpec: T must be positive");
  }
};

struct PdasConfig {
  double c_state = 1.0;
  double c_ctrl = 1.0;
  int max_outer = 60;
  double minres_rel_tol = 1e-10;
  int minres_max_iter = 5000;
  double tol_feas = -1.0; // < 0 resolves to 1e-8 * max(1, beta)
  double tol_comp = -1.0; // < 0 resolves to 1e-8 * max(1, beta)
  double tol_proj = 1e-10;
  double tol_sign = 1e-12;
  bool check_symmetry = true;
  int refine_attempts = 2;

  void validate() const {
    if (!(c_state > 0.0 && c_ctrl > 0.0)) throw std::invalid_argument("PdasConfig: c parameters must be positive");
    if (max_outer < 1 || minres_max_iter < 1) throw std::invalid_argument("PdasConfig: iteration limits must be positive");
    if (!(minres_rel_tol > 0.0) || !(tol_proj > 0.0) || !(tol_sign > 0.0))
      throw std::invalid_argument("PdasConfig: tolerances must be positive");
  }
  double resolved_tol_feas(double beta) const {
    return tol_feas > 0.0 ? tol_feas : 1e-8 * std::max(1.0, std::isfinite(beta) ? beta : 1.0);
  }
  double resolved_tol_comp(double beta) const {
    return tol_comp > 0.0 ? tol_comp : 1e-8 * std::max(1.0, std::isfinite(beta) ? beta : 1.0);
  }
};

struct ActiveSets {
  std::vector<std::uint8_t> state;
  std::vector<std::uint8_t> lower;
  std::vector<std::uint8_t> upper;
  bool operator==(const ActiveSets&) const = default;
  int state_count() const { return static_cast<int>(std::count(state.begin(), state.end(), 1)); }
};

struct KktResiduals {
  double stationarity_l2 = 0.0; // ||q - P(-z/alpha)|| in L2(I x Omega)
  double projection_inf = 0.0;  // max over control dofs
  double feasibility = 0.0;     // max(0, max_m (tau_m - beta))
  double complementarity = 0.0; // |sum_m mu_m (beta - tau_m)|
  double mu_min = 0.0;
  double bound_violation = 0.0;
  double multiplier_norm_gap = 0.0; // |sum|mu| - integral of |density|| (relative)
};

struct KktPoint {
  SpaceTimeField q;
  SpaceTimeField u;
  SpaceTimeField z;
  std::vector<double> mu;         // per-slab integrated multiplier coefficients
  std::vector<double> eta;        // bound multiplier density, size n_q * M
  std::vector<double> trajectory; // g_w^T u_m
  ActiveSets active;
  bool converged = false;
  int outer_iterations = 0;
  long minres_iterations = 0;
  KktResiduals residuals;
};

inline double clamp_bounds(double v, double lo, double hi) { return std::min(hi, std::max(v, lo)); }

// Componentwise clamp of a control field to [q_a, q_b]; infinite bounds pass
// values through unchanged.
inline SpaceTimeField project_bounds(const SpaceTimeField& q, const std::array<double, 2>& lo,
                                     const std::array<double, 2>& hi) {
  SpaceTimeField out = q;
  const int nc = q.block_size / 2;
  for (int m = 0; m < q.grid.M; ++m) {
    double* blk = out.block(m);
    for (int comp = 0; comp < 2; ++comp)
      for (int cell = 0; cell < nc; ++cell) {
        double& v = blk[comp * nc + cell];
        v = clamp_bounds(v, lo[comp], hi[comp]);
      }
  }
  return out;
}

// L2 projection onto piecewise constants: cell/slab averages of a space-time
// evaluator, computed by quadrature with slab splitting at the breakpoints.
inline SpaceTimeField pi_d(const SpaceTimeFn& q, const TriangleMesh& mesh, const TimeGrid& grid,
                           const std::vector<double>& time_breakpoints = {}, int space_degree = 4,
                           int time_gauss = 3) {
  const DiscreteSpaces sp = build_spaces(mesh);
  SpaceTimeField out(grid, SpaceTimeField::Kind::control, sp.n_q);
  const QuadratureRule rule = quadrature_rule(space_degree);
  for (int m = 0; m < grid.M; ++m) {
    const auto tp = time_points(grid.nodes[m], grid.nodes[m + 1], time_breakpoints, time_gauss);
    double* blk = out.block(m);
    for (int cell = 0; cell < mesh.n_cells(); ++cell) {
      const CellGeometry g = cell_affine_map(mesh, cell);
      double acc[2] = {0.0, 0.0};
      for (const auto& qp : rule.points) {
        const Vec2 x = fem_detail::map_point(g, qp);
        double tacc[2] = {0.0, 0.0};
        for (const auto& gp : tp) {
          double v[2];
          q(gp.t, x.x, x.y, v);
          tacc[0] += gp.w * v[0];
          tacc[1] += gp.w * v[1];
        }
        acc[0] += 2.0 * qp.weight * tacc[0]; // reference weights sum to 1/2
        acc[1] += 2.0 * qp.weight * tacc[1];
      }
      blk[sp.control_dof(0, cell)] = acc[0] / grid.k(m);
      blk[sp.control_dof(1, cell)] = acc[1] / grid.k(m);
    }
  }
  return out;
}

// Exact transfer of a P0 control field between nested space-time grids
// (each of n, M divides or is divided by its counterpart). Realizes pi_d for
// nested piecewise constants: injection when refining, child averaging when
// coarsening.
inline SpaceTimeField transfer_control(const SpaceTimeField& src, int n_src, int n_dst, int M_dst) {
  const int M_src = src.grid.M;
  if (!((n_dst % n_src == 0 || n_src % n_dst == 0) && (M_dst % M_src == 0 || M_src % M_dst == 0)))
    throw std::invalid_argument("transfer_control: grids are not nested");
  const int n_fine = std::max(n_src, n_dst);
  const int M_fine = std::max(M_src, M_dst);
  const TimeGrid dst_grid = TimeGrid::uniform(src.grid.T, M_dst);
  const int nc_src = 2 * n_src * n_src, nc_dst = 2 * n_dst * n_dst;
  SpaceTimeField out(dst_grid, SpaceTimeField::Kind::control, 2 * nc_dst);
  std::vector<double> weight(out.data.size(), 0.0);
  const int nc_fine = 2 * n_fine * n_fine;
  const double cell_vol = 1.0 / (2.0 * n_fine * n_fine);
  const double k_fine = src.grid.T / M_fine;
  for (int mf = 0; mf < M_fine; ++mf) {
    const int ms = mf * M_src / M_fine;
    const int md = mf * M_dst / M_fine;
    const double* sblk = src.block(ms);
    double* dblk = out.block(md);
    double* wblk = weight.data() + static_cast<std::size_t>(md) * out.block_size;
    for (int cf = 0; cf < nc_fine; ++cf) {
      const int cs = parent_cell(cf, n_fine, n_src);
      const int cd = parent_cell(cf, n_fine, n_dst);
      for (int comp = 0; comp < 2; ++comp) {
        dblk[comp * nc_dst + cd] += cell_vol * k_fine * sblk[comp * nc_src + cs];
        wblk[comp * nc_dst + cd] += cell_vol * k_fine;
      }
    }
  }
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= weight[i];
  return out;
}

// Assembled operator bundle for one (spec, mesh, grid) triple. Immutable
// after construction; sweeps write into caller-owned scratch fields.
class OcpOperators {
 public:
  OcpOperators(const OcpSpec& spec, const TriangleMesh& mesh, const DiscreteSpaces& spaces,
               const TimeGrid& grid)
      : spec_(spec), mesh_(&mesh), sp_(&spaces), grid_(grid) {
    spec.validate();
    if (!grid.is_uniform) throw std::invalid_argument("OcpOperators: uniform time grid required");
    k_ = grid.T / grid.M;
    M_ = grid.M;
    n_q_ = spaces.n_q;
    op_ = build_step_operator(mesh, spaces, k_);
    coupling_ = assemble_control_coupling(mesh, spaces);
    coupling_t_ = csr_transpose(coupling_);
    vol_ = assemble_control_mass(mesh);
    g_w_ = assemble_weight_vector(mesh, spaces, spec.weight, spec.weight_quad_degree);
    d_loads_.reserve(M_);
    for (int m = 0; m < M_; ++m)
      d_loads_.push_back(assemble_timeslab_load(mesh, spaces, spec.desired_state, grid.nodes[m],
                                                grid.nodes[m + 1], spec.desired_breakpoints,
                                                spec.weight_quad_degree));
  }

  const OcpSpec& spec() const { return spec_; }
  const TriangleMesh& mesh() const { return *mesh_; }
  const DiscreteSpaces& spaces() const { return *sp_; }
  const TimeGrid& grid() const { return grid_; }
  const StepOperator& step() const { return op_; }
  const std::vector<double>& weight_vector() const { return g_w_; }
  const std::vector<double>& control_volumes() const { return vol_; }
  const CsrMatrix& coupling() const { return coupling_; }
  const CsrMatrix& coupling_transpose() const { return coupling_t_; }
  double k() const { return k_; }
  int M() const { return M_; }
  int n_q() const { return n_q_; }
  std::size_t control_size() const { return static_cast<std::size_t>(M_) * n_q_; }
  const std::vector<std::vector<double>>& desired_loads() const { return d_loads_; }

  // u = S(M^uq q): forward sweep with loads F_m = k C q_m
  void forward(const double* q, SpaceTimeField& u) const {
    ensure_field(u);
    StepSolveScratch scratch;
    std::vector<double> rhs(sp_->n_u), prev(sp_->n_u, 0.0);
    for (int m = 0; m < M_; ++m) {
      op_.apply_velocity_mass(prev.data(), rhs.data());
      spmv_add(coupling_, k_, q + static_cast<std::size_t>(m) * n_q_, rhs.data());
      step_solve(op_, rhs, scratch, u.block(m));
      std::copy(u.block(m), u.block(m) + sp_->n_u, prev.begin());
    }
  }

  // z = S^T G with per-slab loads G_m = k M u_m * mass_weight + mu_m g_w - d_m * subtract_d
  void adjoint(const SpaceTimeField* u, const double* mu, bool subtract_d, SpaceTimeField& z) const {
    ensure_field(z);
    StepSolveScratch scratch;
    std::vector<double> rhs(sp_->n_u), next(sp_->n_u, 0.0), g(sp_->n_u);
    for (int m = M_ - 1; m >= 0; --m) {
      op_.apply_velocity_mass(next.data(), rhs.data());
      if (u) {
        op_.apply_velocity_mass(u->block(m), g.data());
        for (int i = 0; i < sp_->n_u; ++i) rhs[i] += k_ * g[i];
      }
      if (mu && mu[m] != 0.0)
        for (int i = 0; i < sp_->n_u; ++i) rhs[i] += mu[m] * g_w_[i];
      if (subtract_d)
        for (int i = 0; i < sp_->n_u; ++i) rhs[i] -= d_loads_[m][i];
      step_solve(op_, rhs, scratch, z.block(m));
      std::copy(z.block(m), z.block(m) + sp_->n_u, next.begin());
    }
  }

  // out = alpha M^qq v + (M^uq)^T S^T M^uu S M^uq v ; optionally also the
  // constraint trajectory tau = W S M^uq v of the forward sweep.
  void hessian_apply(const double* v, double* out, SpaceTimeField& u_scratch,
                     SpaceTimeField& z_scratch, std::vector<double>* tau = nullptr) const {
    forward(v, u_scratch);
    if (tau) *tau = gw_trajectory(u_scratch, g_w_);
    adjoint(&u_scratch, nullptr, false, z_scratch);
    lift_to_control(z_scratch, out);
    for (int m = 0; m < M_; ++m) {
      double* o = out + static_cast<std::size_t>(m) * n_q_;
      const double* vm = v + static_cast<std::size_t>(m) * n_q_;
      for (int i = 0; i < n_q_; ++i) o[i] = k_ * (o[i] + spec_.alpha * vol_[i] * vm[i]);
    }
  }

  // out_m = C^T z_m (the k weight is applied by callers that need it)
  void lift_to_control(const SpaceTimeField& z, double* out) const {
    for (int m = 0; m < M_; ++m)
      spmv(coupling_t_, z.block(m), out + static_cast<std::size_t>(m) * n_q_);
  }

  // Control-space representation of an adjoint field: per-dof cell/slab
  // averages (C^T z_m)_i / |K_i|.
  void control_average(const SpaceTimeField& z, double* out) const {
    lift_to_control(z, out);
    for (int m = 0; m < M_; ++m) {
      double* o = out + static_cast<std::size_t>(m) * n_q_;
      for (int i = 0; i < n_q_; ++i) o[i] /= vol_[i];
    }
  }

  // rhs of the stationarity block: (M^uq)^T S^T d
  std::vector<double> control_rhs(SpaceTimeField& z_scratch) const {
    adjoint(nullptr, nullptr, true, z_scratch);
    std::vector<double> r(control_size());
    lift_to_control(z_scratch, r.data());
    for (auto& v : r) v = -k_ * v; // loads carried -d, flip sign
    return r;
  }

  SpaceTimeField make_velocity_field() const {
    return SpaceTimeField(grid_, SpaceTimeField::Kind::velocity, sp_->n_u);
  }
  SpaceTimeField make_control_field() const {
    return SpaceTimeField(grid_, SpaceTimeField::Kind::control, n_q_);
  }

 private:
  void ensure_field(SpaceTimeField& f) const {
    if (f.block_size != sp_->n_u || f.grid.M != M_)
      f = SpaceTimeField(grid_, SpaceTimeField::Kind::velocity, sp_->n_u);
  }

  OcpSpec spec_;
  const TriangleMesh* mesh_;
  const DiscreteSpaces* sp_;
  TimeGrid grid_;
  double k_ = 0.0;
  int M_ = 0;
  int n_q_ = 0;
  StepOperator op_;
  CsrMatrix coupling_, coupling_t_;
  std::vector<double> vol_;
  std::vector<double> g_w_;
  std::vector<std::vector<double>> d_loads_;
};

// One adjoint solve with the weight load on the last slab generates every
// column of S^T W^T on a uniform grid: column m holds the blocks
// zeta_{M-m+i} at row block i <= m and zeros below.
inline SpaceTimeField assemble_adjoint_weight_columns(const OcpOperators& ops) {
  std::vector<double> mu(ops.M(), 0.0);
  mu[ops.M() - 1] = 1.0;
  SpaceTimeField zeta = ops.make_velocity_field();
  ops.adjoint(nullptr, mu.data(), false, zeta);
  return zeta;
}

// Materializes column m (0-based slab index) of S^T W^T from the kernel.
inline std::vector<double> toeplitz_column(const SpaceTimeField& zeta, int m) {
  const int M = zeta.grid.M;
  const int nu = zeta.block_size;
  std::vector<double> col(static_cast<std::size_t>(M) * nu, 0.0);
  for (int i = 0; i <= m; ++i) {
    const int src = M - 1 - m + i;
    std::copy(zeta.block(src), zeta.block(src) + nu, col.begin() + static_cast<std::size_t>(i) * nu);
  }
  return col;
}

struct SchurPrecond {
  DenseMatrix shat;        // full M x M Schur block W S M^uq (M^qq)^{-1} (M^uq)^T S^T W^T
  DenseCholesky full_chol; // validates positive definiteness once per grid
};

// Builds the dense Schur block from the Toeplitz kernel: one adjoint solve,
// one Gram matrix, and suffix sums along diagonals. The multiplier block of
// the preconditioner applies +(1/alpha) * shat restricted to active rows;
// the positive sign keeps the preconditioner definite for MINRES.
inline SchurPrecond build_preconditioner(const OcpOperators& ops) {
  const int M = ops.M();
  const int n_q = ops.n_q();
  const SpaceTimeField zeta = assemble_adjoint_weight_columns(ops);
  // xi_a = V^{-1/2} C^T zeta_a
  Eigen::MatrixXd xi(n_q, M);
  std::vector<double> tmp(n_q);
  const auto& vol = ops.control_volumes();
  for (int a = 0; a < M; ++a) {
    spmv(ops.coupling_transpose(), zeta.block(a), tmp.data());
    for (int i = 0; i < n_q; ++i) xi(i, a) = tmp[i] / std::sqrt(vol[i]);
  }
  const Eigen::MatrixXd gram = xi.transpose() * xi;
  SchurPrecond pc;
  pc.shat = DenseMatrix(M, M);
  const double k = ops.k();
  // suffix-summed diagonals: shat[i][j] with i - j = d equals
  // k * sum_{b = M-1-j}^{M-1} gram(b - d, b)
  for (int d = 0; d < M; ++d) {
    double acc = 0.0;
    for (int j = 0; j < M - d; ++j) {
      const int b = M - 1 - j;
      acc += gram(b - d, b);
      pc.shat.at(j + d, j) = k * acc;
      pc.shat.at(j, j + d) = k * acc;
    }
  }
  pc.full_chol = DenseCholesky(pc.shat); // throws "not SPD" for degenerate weights
  return pc;
}

namespace ocp_detail {

struct KktEvaluation {
  std::vector<double> trajectory; // g_w^T u_m
  std::vector<double> z_avg;      // control-space representation of z
  std::vector<double> eta;        // -(alpha q + z_avg)
  KktResiduals residuals;
};

// Recomputes every optimality residual from scratch for given (q, mu):
// fresh forward and adjoint sweeps, no PDAS internals involved.
inline KktEvaluation evaluate_kkt(const OcpOperators& ops, const double* q,
                                  const std::vector<double>& mu, SpaceTimeField& u,
                                  SpaceTimeField& z) {
  const OcpSpec& spec = ops.spec();
  const int M = ops.M(), n_q = ops.n_q();
  const int nc = n_q / 2;
  KktEvaluation ev;
  ops.forward(q, u);
  ev.trajectory = gw_trajectory(u, ops.weight_vector());
  ops.adjoint(&u, mu.data(), true, z);
  ev.z_avg.resize(ops.control_size());
  ops.control_average(z, ev.z_avg.data());
  ev.eta.resize(ops.control_size());

  KktResiduals& r = ev.residuals;
  double stat_sq = 0.0;
  const double k = ops.k();
  for (int m = 0; m < M; ++m) {
    const double* qm = q + static_cast<std::size_t>(m) * n_q;
    const double* zm = ev.z_avg.data() + static_cast<std::size_t>(m) * n_q;
    double* em = ev.eta.data() + static_cast<std::size_t>(m) * n_q;
    for (int i = 0; i < n_q; ++i) {
      const int comp = i / nc;
      const double target = clamp_bounds(-zm[i] / spec.alpha, spec.q_lower[comp], spec.q_upper[comp]);
      const double diff = qm[i] - target;
      r.projection_inf = std::max(r.projection_inf, std::abs(diff));
      stat_sq += k * ops.control_volumes()[i] * diff * diff;
      em[i] = -(spec.alpha * qm[i] + zm[i]);
      const double viol = std::max(qm[i] - spec.q_upper[comp], spec.q_lower[comp] - qm[i]);
      r.bound_violation = std::max(r.bound_violation, std::max(0.0, viol));
    }
  }
  r.stationarity_l2 = std::sqrt(stat_sq);

  r.mu_min = 0.0;
  if (spec.has_state_constraint()) {
    double comp_sum = 0.0, l1_coeff = 0.0, l1_density = 0.0;
    for (int m = 0; m < M; ++m) {
      r.feasibility = std::max(r.feasibility, ev.trajectory[m] - spec.beta);
      r.mu_min = std::min(r.mu_min, mu[m]);
      comp_sum += mu[m] * (spec.beta - ev.trajectory[m]);
      l1_coeff += std::abs(mu[m]);
      l1_density += std::abs(mu[m] / k) * k;
    }
    r.feasibility = std::max(0.0, r.feasibility);
    r.complementarity = std::abs(comp_sum);
    r.multiplier_norm_gap =
        std::abs(l1_coeff - l1_density) / std::max(1.0, std::max(l1_coeff, l1_density));
  }
  return ev;
}

inline ActiveSets update_active_sets(const OcpOperators& ops, const PdasConfig& cfg, const double* q,
                                     const std::vector<double>& mu, const KktEvaluation& ev) {
  const OcpSpec& spec = ops.spec();
  const int M = ops.M(), n_q = ops.n_q();
  const int nc = n_q / 2;
  ActiveSets next;
  next.state.assign(M, 0);
  if (spec.has_state_constraint()) {
    const double k = ops.k();
    for (int m = 0; m < M; ++m)
      if (mu[m] / k + cfg.c_state * (ev.trajectory[m] - spec.beta) > 0.0) next.state[m] = 1;
  }
  if (spec.has_bounds()) {
    next.lower.assign(ops.control_size(), 0);
    next.upper.assign(ops.control_size(), 0);
    for (std::size_t idx = 0; idx < ops.control_size(); ++idx) {
      const int comp = static_cast<int>(idx % n_q) / nc;
      const double qi = q[idx], ei = ev.eta[idx];
      if (std::isfinite(spec.q_upper[comp]) && ei + cfg.c_ctrl * (qi - spec.q_upper[comp]) > 0.0)
        next.upper[idx] = 1;
      else if (std::isfinite(spec.q_lower[comp]) && ei + cfg.c_ctrl * (qi - spec.q_lower[comp]) < 0.0)
        next.lower[idx] = 1;
    }
  }
  return next;
}

} // namespace ocp_detail

struct WarmStart {
  SpaceTimeField control; // P0 control field on the source grid
  std::vector<double> mu; // per-slab coefficients on the source grid
  int n = 0;              // source mesh subdivisions
};

// Primal-dual active-set solve of the fully discrete optimal control problem.
// Each outer iteration solves the equality-constrained saddle system on the
// current guess of active sets with preconditioned MINRES; control dofs at
// active bounds are held at the bound and eliminated from the system.
inline KktPoint pdas_solve(const OcpOperators& ops, const PdasConfig& cfg,
                           const SchurPrecond& precond, const WarmStart* warm = nullptr) {
  cfg.validate();
  const OcpSpec& spec = ops.spec();
  const int M = ops.M(), n_q = ops.n_q();
  const int nc = n_q / 2;
  const std::size_t nq_total = ops.control_size();
  const double tol_feas = cfg.resolved_tol_feas(spec.beta);
  const double tol_comp = cfg.resolved_tol_comp(spec.beta);

  KktPoint point;
  point.q = ops.make_control_field();
  point.mu.assign(M, 0.0);
  ActiveSets active;
  active.state.assign(M, 0);
  if (spec.has_bounds()) {
    active.lower.assign(nq_total, 0);
    active.upper.assign(nq_total, 0);
  }

  if (warm) {
    const int n_dst = ops.spaces().n;
    point.q = transfer_control(warm->control, warm->n, n_dst, M);
    point.q = project_bounds(point.q, spec.q_lower, spec.q_upper);
    // multiplier density transfer by slab midpoint
    const int M_src = static_cast<int>(warm->mu.size());
    const double k_src = ops.grid().T / M_src;
    for (int m = 0; m < M; ++m) {
      const double tmid = ops.grid().midpoint(m);
      int ms = std::min(static_cast<int>(tmid / k_src), M_src - 1);
      point.mu[m] = std::max(0.0, warm->mu[ms] / k_src) * ops.k();
      if (spec.has_state_constraint() && point.mu[m] > 0.0) active.state[m] = 1;
    }
    if (spec.has_bounds()) {
      for (std::size_t idx = 0; idx < nq_total; ++idx) {
        const int comp = static_cast<int>(idx % n_q) / nc;
        if (std::isfinite(spec.q_upper[comp]) && point.q.data[idx] >= spec.q_upper[comp])
          active.upper[idx] = 1;
        if (std::isfinite(spec.q_lower[comp]) && point.q.data[idx] <= spec.q_lower[comp])
          active.lower[idx] = 1;
      }
    }
  }

  SpaceTimeField u_scratch = ops.make_velocity_field();
  SpaceTimeField z_scratch = ops.make_velocity_field();
  const std::vector<double> base_rhs = ops.control_rhs(z_scratch);

  double minres_tol = cfg.minres_rel_tol;
  int refinements_left = cfg.refine_attempts;
  bool sym_checked = !cfg.check_symmetry;
  std::vector<double> prev_solution; // packed (q_F, mu_A) from the previous outer pass

  for (int outer = 1; outer <= cfg.max_outer; ++outer) {
    point.outer_iterations = outer;
    // index maps for the reduced system
    std::vector<int> free_idx;
    free_idx.reserve(nq_total);
    for (std::size_t i = 0; i < nq_total; ++i) {
      const bool bound_active =
          spec.has_bounds() && ((!active.upper.empty() && active.upper[i]) ||
                                (!active.lower.empty() && active.lower[i]));
      if (!bound_active) free_idx.push_back(static_cast<int>(i));
    }
    if (free_idx.empty())
      throw std::runtime_error("pdas_solve: every control dof is bound-active (degenerate)");
    std::vector<int> act_idx;
    for (int m = 0; m < M; ++m)
      if (active.state[m]) act_idx.push_back(m);
    const std::size_t n_free = free_idx.size(), n_act = act_idx.size();
    const std::size_t dim = n_free + n_act;

    // bound contribution: q fixed at bounds enters the rhs
    std::vector<double> q_bound(nq_total, 0.0);
    bool any_bound = false;
    if (spec.has_bounds()) {
      for (std::size_t i = 0; i < nq_total; ++i) {
        const int comp = static_cast<int>(i % n_q) / nc;
        if (!active.upper.empty() && active.upper[i]) {
          q_bound[i] = spec.q_upper[comp];
          any_bound = true;
        } else if (!active.lower.empty() && active.lower[i]) {
          q_bound[i] = spec.q_lower[comp];
          any_bound = true;
        }
      }
    }
    std::vector<double> rhs(dim, 0.0);
    std::vector<double> h_qb, tau_qb;
    if (any_bound) {
      h_qb.resize(nq_total);
      ops.hessian_apply(q_bound.data(), h_qb.data(), u_scratch, z_scratch, &tau_qb);
    }
    for (std::size_t j = 0; j < n_free; ++j) {
      const int i = free_idx[j];
      rhs[j] = base_rhs[i] - (any_bound ? h_qb[i] : 0.0);
    }
    for (std::size_t j = 0; j < n_act; ++j)
      rhs[n_free + j] = spec.beta - (any_bound ? tau_qb[act_idx[j]] : 0.0);

    // saddle operator on packed vectors
    std::vector<double> v_full(nq_total), hv(nq_total), tau;
    auto apply_saddle = [&](const double* x, double* y) {
      std::fill(v_full.begin(), v_full.end(), 0.0);
      for (std::size_t j = 0; j < n_free; ++j) v_full[free_idx[j]] = x[j];
      ops.forward(v_full.data(), u_scratch);
      tau = gw_trajectory(u_scratch, ops.weight_vector());
      // adjoint loads: k M u + W^T nu
      std::vector<double> nu(M, 0.0);
      for (std::size_t j = 0; j < n_act; ++j) nu[act_idx[j]] = x[n_free + j];
      ops.adjoint(&u_scratch, nu.data(), false, z_scratch);
      ops.lift_to_control(z_scratch, hv.data());
      for (int m = 0; m < M; ++m) {
        double* o = hv.data() + static_cast<std::size_t>(m) * n_q;
        const double* vm = v_full.data() + static_cast<std::size_t>(m) * n_q;
        for (int i = 0; i < n_q; ++i)
          o[i] = ops.k() * (o[i] + spec.alpha * ops.control_volumes()[i] * vm[i]);
      }
      for (std::size_t j = 0; j < n_free; ++j) y[j] = hv[free_idx[j]];
      for (std::size_t j = 0; j < n_act; ++j) y[n_free + j] = tau[act_idx[j]];
    };

    // block-diagonal preconditioner: diag(alpha M^qq)_FF and (1/alpha) Shat_AA
    DenseCholesky act_chol;
    if (n_act > 0) {
      DenseMatrix sub(static_cast<int>(n_act), static_cast<int>(n_act));
      for (std::size_t a = 0; a < n_act; ++a)
        for (std::size_t b = 0; b < n_act; ++b) sub.at(a, b) = precond.shat.at(act_idx[a], act_idx[b]);
      act_chol = DenseCholesky(sub);
    }
    std::vector<double> act_in(n_act), act_out(n_act);
    auto apply_pinv = [&](const double* x, double* y) {
      for (std::size_t j = 0; j < n_free; ++j) {
        const int i = free_idx[j];
        y[j] = x[j] / (spec.alpha * ops.k() * ops.control_volumes()[i % n_q]);
      }
      if (n_act > 0) {
        std::copy(x + n_free, x + dim, act_in.begin());
        act_chol.solve(act_in.data(), act_out.data());
        for (std::size_t j = 0; j < n_act; ++j) y[n_free + j] = spec.alpha * act_out[j];
      }
    };

    // warm start from the previous iterate
    std::vector<double> x0(dim, 0.0);
    for (std::size_t j = 0; j < n_free; ++j) x0[j] = point.q.data[free_idx[j]];
    for (std::size_t j = 0; j < n_act; ++j) x0[n_free + j] = point.mu[act_idx[j]];

    const MinresResult inner = minres(dim, apply_saddle, apply_pinv, rhs, minres_tol,
                                      cfg.minres_max_iter, &x0, !sym_checked);
    sym_checked = true;
    point.minres_iterations += inner.iterations;
    if (!inner.converged)
      throw std::runtime_error("pdas_solve: inner MINRES did not converge (relative residual " +
                               std::to_string(inner.relative_residual) + ")");

    // unpack
    point.q.data = q_bound;
    for (std::size_t j = 0; j < n_free; ++j) point.q.data[free_idx[j]] = inner.x[j];
    std::fill(point.mu.begin(), point.mu.end(), 0.0);
    for (std::size_t j = 0; j < n_act; ++j) point.mu[act_idx[j]] = inner.x[n_free + j];

    // fresh residuals and active-set update
    const auto ev = ocp_detail::evaluate_kkt(ops, point.q.data.data(), point.mu, u_scratch, z_scratch);
    const ActiveSets next = ocp_detail::update_active_sets(ops, cfg, point.q.data.data(), point.mu, ev);
    const bool repeated = next == active;
    const bool kkt_ok = ev.residuals.feasibility <= tol_feas &&
                        ev.residuals.complementarity <= tol_comp &&
                        ev.residuals.mu_min >= -cfg.tol_sign &&
                        ev.residuals.projection_inf <= cfg.tol_proj;
    point.residuals = ev.residuals;
    point.trajectory = ev.trajectory;
    point.eta = ev.eta;
    point.active = active;
    if (repeated && kkt_ok) {
      point.converged = true;
      point.u = u_scratch;
      point.z = z_scratch;
      return point;
    }
    if (repeated && refinements_left > 0) {
      minres_tol = std::max(minres_tol * 1e-3, 1e-15);
      --refinements_left;
      continue; // re-solve the same system more accurately, warm started
    }
    if (repeated) {
      // sets are stable but tolerances out of reach: report honestly
      point.converged = false;
      point.u = u_scratch;
      point.z = z_scratch;
      return point;
    }
    active = next;
  }
  // max_outer exceeded: return the best iterate, flagged
  const auto ev = ocp_detail::evaluate_kkt(ops, point.q.data.data(), point.mu, u_scratch, z_scratch);
  point.residuals = ev.residuals;
  point.trajectory = ev.trajectory;
  point.eta = ev.eta;
  point.active = active;
  point.converged = false;
  point.u = u_scratch;
  point.z = z_scratch;
  return point;
}

inline KktPoint pdas_solve(const OcpSpec& spec, const TriangleMesh& mesh, const TimeGrid& grid,
                           const PdasConfig& cfg, const WarmStart* warm = nullptr) {
  const DiscreteSpaces sp = build_spaces(mesh);
  const OcpOperators ops(spec, mesh, sp, grid);
  const SchurPrecond precond = build_preconditioner(ops);
  return pdas_solve(ops, cfg, precond, warm);
}

// From-scratch residual report for an externally supplied point.
inline KktResiduals kkt_residuals(const OcpOperators& ops, const SpaceTimeField& q,
                                  const std::vector<double>& mu) {
  SpaceTimeField u = ops.make_velocity_field();
  SpaceTimeField z = ops.make_velocity_field();
  return ocp_detail::evaluate_kkt(ops, q.data.data(), mu, u, z).residuals;
}

// J(q, u) = 1/2 ||u - u_d||^2_{L2(I x Omega)} + alpha/2 ||q||^2.
inline double evaluate_objective(const OcpOperators& ops, const SpaceTimeField& q,
                                 const SpaceTimeField& u, int time_gauss = 3) {
  const OcpSpec& spec = ops.spec();
  const int M = ops.M(), n_q = ops.n_q();
  const double k = ops.k();
  const auto& mesh = ops.mesh();
  const auto& sp = ops.spaces();
  const CsrMatrix mass = assemble_velocity_mass(mesh, sp);
  const QuadratureRule rule = quadrature_rule(spec.weight_quad_degree);
  double tracking = 0.0, control = 0.0;
  std::vector<double> mu_blk(sp.n_u);
  for (int m = 0; m < M; ++m) {
    const double* ub = u.block(m);
    spmv(mass, ub, mu_blk.data());
    double unorm = 0.0, cross = 0.0;
    for (int i = 0; i < sp.n_u; ++i) {
      unorm += ub[i] * mu_blk[i];
      cross += ub[i] * ops.desired_loads()[m][i];
    }
    // int_{I_m} ||u_d||^2 by time Gauss x space quadrature
    double udsq = 0.0;
    for (const auto& gp :
         time_points(ops.grid().nodes[m], ops.grid().nodes[m + 1], spec.desired_breakpoints, time_gauss)) {
      double acc = 0.0;
      for (int cell = 0; cell < mesh.n_cells(); ++cell) {
        const CellGeometry g = cell_affine_map(mesh, cell);
        for (const auto& qp : rule.points) {
          const Vec2 x = fem_detail::map_point(g, qp);
          double v[2];
          spec.desired_state(gp.t, x.x, x.y, v);
          acc += 2.0 * g.area * qp.weight * (v[0] * v[0] + v[1] * v[1]);
        }
      }
      udsq += gp.w * acc;
    }
    tracking += k * unorm - 2.0 * cross + udsq;
    const double* qb = q.block(m);
    double qnorm = 0.0;
    for (int i = 0; i < n_q; ++i) qnorm += ops.control_volumes()[i] * qb[i] * qb[i];
    control += k * qnorm;
  }
  return 0.5 * tracking + 0.5 * spec.alpha * control;
}

} // namespace stokesoc
