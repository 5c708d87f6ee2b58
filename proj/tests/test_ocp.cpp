#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "stokesoc/examples.hpp"
#include "stokesoc/ocp.hpp"
#include "stokesoc/oracle.hpp"
#include "test_oracles.hpp"

using namespace stokesoc;

namespace {

// small synthetic problem with O(1) data on the Example-1 weight field
OcpSpec tiny_spec(double beta = kInf) {
  OcpSpec spec;
  spec.alpha = 1.0;
  spec.beta = beta;
  spec.weight = [](double x, double y, double out[2]) { ex_detail::weight_y(x, y, out); };
  spec.desired_state = [](double t, double x, double y, double out[2]) {
    ex_detail::weight_y(x, y, out);
    const double a = 3.0 * std::sin(3.14159265358979 * t);
    out[0] *= a;
    out[1] *= a;
  };
  return spec;
}

} // namespace

TEST_CASE("pi_d reproduces constants and slab-midpoint values") {
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const TimeGrid grid = TimeGrid::uniform(1.0, 4);
  const auto constant = pi_d(
      [](double, double, double, double out[2]) {
        out[0] = 2.5;
        out[1] = -1.0;
      },
      mesh, grid);
  const DiscreteSpaces sp = build_spaces(mesh);
  for (int m = 0; m < 4; ++m)
    for (int cell = 0; cell < sp.n_cells; ++cell) {
      REQUIRE(constant.block(m)[sp.control_dof(0, cell)] == Catch::Approx(2.5).margin(1e-14));
      REQUIRE(constant.block(m)[sp.control_dof(1, cell)] == Catch::Approx(-1.0).margin(1e-14));
    }
  // linear in t: the average over a slab is the midpoint value
  const auto linear = pi_d(
      [](double t, double, double, double out[2]) {
        out[0] = 3.0 * t;
        out[1] = 0.0;
      },
      mesh, grid);
  for (int m = 0; m < 4; ++m)
    REQUIRE(linear.block(m)[0] == Catch::Approx(3.0 * grid.midpoint(m)).margin(1e-13));
}

TEST_CASE("pi_d maps admissible fields into the admissible set") {
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const TimeGrid grid = TimeGrid::uniform(1.0, 3);
  const std::array<double, 2> lo = {-0.5, -2.0}, hi = {1.5, 0.25};
  std::mt19937_64 rng = oracles::rng(71);
  std::uniform_real_distribution<double> amp(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const double a0 = amp(rng), a1 = amp(rng), ph = amp(rng);
    auto field = [&](double t, double x, double y, double out[2]) {
      out[0] = -0.5 + 2.0 * a0 * std::pow(std::sin(3.0 * t + x + ph), 2.0);
      out[1] = -2.0 + 2.25 * a1 * std::pow(std::cos(2.0 * t + y), 2.0);
    };
    const auto proj = pi_d(field, mesh, grid);
    const int nc = proj.block_size / 2;
    for (int m = 0; m < 3; ++m)
      for (int i = 0; i < proj.block_size; ++i) {
        const int comp = i / nc;
        REQUIRE(proj.block(m)[i] >= lo[comp] - 1e-12);
        REQUIRE(proj.block(m)[i] <= hi[comp] + 1e-12);
      }
  }
}

TEST_CASE("project_bounds clamps componentwise") {
  const TriangleMesh mesh = build_unit_square_mesh(1);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(1.0, 2);
  SpaceTimeField q(grid, SpaceTimeField::Kind::control, sp.n_q);
  std::mt19937_64 rng = oracles::rng(73);
  std::normal_distribution<double> val(0.0, 3.0);
  for (auto& v : q.data) v = val(rng);
  const auto same = project_bounds(q, {-kInf, -kInf}, {kInf, kInf});
  REQUIRE(same.data == q.data);
  const auto clamped = project_bounds(q, {-0.1, -0.1}, {-0.1 + 1e-6, -0.1 + 1e-6});
  for (double v : clamped.data) {
    REQUIRE(v >= -0.1);
    REQUIRE(v <= -0.1 + 1e-6);
  }
  const auto once = project_bounds(q, {-1.0, 0.0}, {0.5, 2.0});
  const auto twice = project_bounds(once, {-1.0, 0.0}, {0.5, 2.0});
  REQUIRE(once.data == twice.data);
}

TEST_CASE("transfer_control is exact for nested P0 fields") {
  const TimeGrid coarse_grid = TimeGrid::uniform(1.0, 2);
  SpaceTimeField coarse(coarse_grid, SpaceTimeField::Kind::control, 2 * 2 * 1 * 1);
  std::mt19937_64 rng = oracles::rng(79);
  std::normal_distribution<double> val;
  for (auto& v : coarse.data) v = val(rng);
  // refine and coarsen back: identity
  const auto fine = transfer_control(coarse, 1, 2, 6);
  const auto back = transfer_control(fine, 2, 1, 2);
  for (std::size_t i = 0; i < coarse.data.size(); ++i)
    REQUIRE(back.data[i] == Catch::Approx(coarse.data[i]).margin(1e-14));
  REQUIRE_THROWS_AS(transfer_control(fine, 2, 3, 6), std::invalid_argument);
}

TEST_CASE("reduced Hessian: zero, symmetry, coercivity") {
  const OcpSpec spec = tiny_spec();
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(1.0, 3);
  const OcpOperators ops(spec, mesh, sp, grid);
  SpaceTimeField us = ops.make_velocity_field(), zs = ops.make_velocity_field();
  const std::size_t dim = ops.control_size();
  std::vector<double> v(dim, 0.0), hv(dim), w(dim), hw(dim);
  ops.hessian_apply(v.data(), hv.data(), us, zs);
  for (double x : hv) REQUIRE(x == 0.0);
  std::mt19937_64 rng = oracles::rng(83);
  std::normal_distribution<double> val;
  for (int trial = 0; trial < 3; ++trial) {
    for (auto& x : v) x = val(rng);
    for (auto& x : w) x = val(rng);
    ops.hessian_apply(v.data(), hv.data(), us, zs);
    ops.hessian_apply(w.data(), hw.data(), us, zs);
    double hv_w = 0.0, hw_v = 0.0, hv_v = 0.0, mass_v = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      hv_w += hv[i] * w[i];
      hw_v += hw[i] * v[i];
      hv_v += hv[i] * v[i];
      mass_v += ops.k() * ops.control_volumes()[i % ops.n_q()] * v[i] * v[i];
    }
    REQUIRE(std::abs(hv_w - hw_v) <= 1e-10 * std::max(std::abs(hv_w), std::abs(hw_v)));
    REQUIRE(hv_v >= spec.alpha * mass_v * (1.0 - 1e-12));
  }
}

TEST_CASE("Toeplitz adjoint-weight columns match brute force") {
  const OcpSpec spec = tiny_spec();
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(1.0, 3);
  const OcpOperators ops(spec, mesh, sp, grid);
  const SpaceTimeField zeta = assemble_adjoint_weight_columns(ops);
  for (int m = 0; m < 3; ++m) {
    std::vector<double> mu(3, 0.0);
    mu[m] = 1.0;
    SpaceTimeField z = ops.make_velocity_field();
    ops.adjoint(nullptr, mu.data(), false, z);
    const auto col = toeplitz_column(zeta, m);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < sp.n_u; ++j)
        REQUIRE(col[static_cast<std::size_t>(i) * sp.n_u + j] ==
                Catch::Approx(z.block(i)[j]).margin(1e-12));
  }
  // M = 1: the single column is the one-step adjoint of g_w
  const TimeGrid g1 = TimeGrid::uniform(1.0, 1);
  const OcpOperators ops1(spec, mesh, sp, g1);
  const SpaceTimeField zeta1 = assemble_adjoint_weight_columns(ops1);
  std::vector<double> mu1(1, 1.0);
  SpaceTimeField z1 = ops1.make_velocity_field();
  ops1.adjoint(nullptr, mu1.data(), false, z1);
  const auto col1 = toeplitz_column(zeta1, 0);
  for (int j = 0; j < sp.n_u; ++j) REQUIRE(col1[j] == Catch::Approx(z1.block(0)[j]).margin(1e-14));
}

TEST_CASE("zero weight produces a zero kernel and a degenerate preconditioner") {
  OcpSpec spec = tiny_spec(1.0);
  spec.weight = [](double, double, double out[2]) { out[0] = out[1] = 0.0; };
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(1.0, 2);
  const OcpOperators ops(spec, mesh, sp, grid);
  const SpaceTimeField zeta = assemble_adjoint_weight_columns(ops);
  for (double v : zeta.data) REQUIRE(v == 0.0);
  REQUIRE_THROWS_AS(build_preconditioner(ops), std::runtime_error); // Shat not SPD
}

TEST_CASE("Schur block matches the dense brute force") {
  const OcpSpec spec = tiny_spec(1.0);
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(1.0, 2);
  const OcpOperators ops(spec, mesh, sp, grid);
  const SchurPrecond pc = build_preconditioner(ops);
  const int M = 2, n_q = ops.n_q();
  Eigen::MatrixXd wsc(M, M * n_q);
  SpaceTimeField u = ops.make_velocity_field();
  std::vector<double> e(static_cast<std::size_t>(M) * n_q, 0.0);
  for (int j = 0; j < M * n_q; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    ops.forward(e.data(), u);
    const auto tau = gw_trajectory(u, ops.weight_vector());
    for (int m = 0; m < M; ++m) wsc(m, j) = tau[m];
  }
  Eigen::VectorXd dinv(M * n_q);
  for (int m = 0; m < M; ++m)
    for (int i = 0; i < n_q; ++i) dinv(m * n_q + i) = 1.0 / (ops.k() * ops.control_volumes()[i]);
  const Eigen::MatrixXd shat_dense = wsc * dinv.asDiagonal() * wsc.transpose();
  for (int a = 0; a < M; ++a)
    for (int b = 0; b < M; ++b)
      REQUIRE(pc.shat.at(a, b) == Catch::Approx(shat_dense(a, b)).epsilon(1e-10));
}

TEST_CASE("preconditioned MINRES needs no more iterations than unpreconditioned") {
  // the spec's comparison point: Example 1 data at h = 1/8, k = 1/30
  const ExampleDef ex = example1();
  const TriangleMesh mesh = build_unit_square_mesh(8);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(1.0, 30);
  const OcpOperators ops(ex.ocp, mesh, sp, grid);
  SpaceTimeField us = ops.make_velocity_field(), zs = ops.make_velocity_field();
  const std::vector<double> rhs = ops.control_rhs(zs);
  const std::size_t dim = ops.control_size();
  auto apply = [&](const double* x, double* y) { ops.hessian_apply(x, y, us, zs); };
  auto ident = [dim](const double* x, double* y) { std::copy(x, x + dim, y); };
  auto pinv = [&](const double* x, double* y) {
    for (std::size_t i = 0; i < dim; ++i)
      y[i] = x[i] / (ex.ocp.alpha * ops.k() * ops.control_volumes()[i % ops.n_q()]);
  };
  const auto plain = minres(dim, apply, ident, rhs, 1e-8, 4000);
  const auto pre = minres(dim, apply, pinv, rhs, 1e-8, 4000);
  REQUIRE(pre.converged);
  REQUIRE(plain.converged);
  REQUIRE(pre.iterations <= plain.iterations);
}

TEST_CASE("unconstrained problem solves in one PDAS iteration") {
  const OcpSpec spec = tiny_spec(kInf);
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const TimeGrid grid = TimeGrid::uniform(1.0, 3);
  PdasConfig cfg;
  cfg.minres_rel_tol = 1e-12;
  const KktPoint p = pdas_solve(spec, mesh, grid, cfg);
  REQUIRE(p.converged);
  REQUIRE(p.outer_iterations == 1);
  for (double m : p.mu) REQUIRE(m == 0.0);
  REQUIRE(p.residuals.projection_inf < 1e-10);
}

TEST_CASE("PDAS agrees with the enumeration oracle on tiny instances") {
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const DiscreteSpaces sp = build_spaces(mesh);
  struct Case {
    double beta;
    std::array<double, 2> lo, hi;
    int M;
  };
  const std::vector<Case> cases = {
      {1.2e-5, {-kInf, -kInf}, {kInf, kInf}, 3},
      {kInf, {-kInf, -0.004}, {0.004, kInf}, 2},
      {1.2e-5, {-kInf, -0.004}, {0.004, kInf}, 3},
  };
  for (const auto& c : cases) {
    OcpSpec spec = tiny_spec(c.beta);
    spec.q_lower = c.lo;
    spec.q_upper = c.hi;
    const TimeGrid grid = TimeGrid::uniform(1.0, c.M);
    const OcpOperators ops(spec, mesh, sp, grid);
    PdasConfig cfg;
    cfg.minres_rel_tol = 1e-13;
    const SchurPrecond pc = build_preconditioner(ops);
    const KktPoint p = pdas_solve(ops, cfg, pc);
    REQUIRE(p.converged);
    const OraclePoint o = enumerate_active_sets_oracle(ops);
    for (std::size_t i = 0; i < o.q.size(); ++i)
      REQUIRE(p.q.data[i] == Catch::Approx(o.q[i]).margin(1e-8));
    for (int m = 0; m < c.M; ++m) REQUIRE(p.mu[m] == Catch::Approx(o.mu[m]).margin(1e-8));
  }
}

TEST_CASE("oracle flags one constructed binding slab") {
  OcpSpec spec = tiny_spec(kInf);
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(1.0, 3);
  PdasConfig cfg;
  const KktPoint unc = pdas_solve(spec, mesh, grid, cfg);
  const auto peak_it = std::max_element(unc.trajectory.begin(), unc.trajectory.end());
  const int peak_slab = static_cast<int>(peak_it - unc.trajectory.begin());
  OcpSpec con = spec;
  con.beta = 0.9 * (*peak_it);
  const OcpOperators ops(con, mesh, sp, grid);
  const OraclePoint o = enumerate_active_sets_oracle(ops);
  REQUIRE(o.state_active[peak_slab] == 1);
  // beta = inf: the empty active set wins
  const OcpOperators uops(spec, mesh, sp, grid);
  const OraclePoint ou = enumerate_active_sets_oracle(uops);
  for (auto flag : ou.state_active) REQUIRE(flag == 0);
}

TEST_CASE("kkt_residuals flags perturbations") {
  const OcpSpec spec = tiny_spec(1.2e-5);
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(1.0, 3);
  const OcpOperators ops(spec, mesh, sp, grid);
  PdasConfig cfg;
  cfg.minres_rel_tol = 1e-13;
  const SchurPrecond pc = build_preconditioner(ops);
  const KktPoint p = pdas_solve(ops, cfg, pc);
  REQUIRE(p.converged);
  const KktResiduals clean = kkt_residuals(ops, p.q, p.mu);
  REQUIRE(clean.feasibility <= 1e-8);
  REQUIRE(clean.complementarity <= 1e-8);
  REQUIRE(clean.projection_inf <= 1e-10);
  REQUIRE(clean.mu_min >= 0.0);
  REQUIRE(clean.multiplier_norm_gap <= 1e-13);
  SpaceTimeField q2 = p.q;
  q2.data[0] += 1e-3;
  const KktResiduals bad = kkt_residuals(ops, q2, p.mu);
  REQUIRE(bad.projection_inf > 1e-4);
  std::vector<double> mu2 = p.mu;
  mu2[0] = -1e-3;
  const KktResiduals neg = kkt_residuals(ops, p.q, mu2);
  REQUIRE(neg.mu_min < 0.0);
}

TEST_CASE("objective evaluation") {
  const OcpSpec spec = tiny_spec(kInf);
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(1.0, 3);
  const OcpOperators ops(spec, mesh, sp, grid);
  SpaceTimeField q0 = ops.make_control_field();
  SpaceTimeField u0 = ops.make_velocity_field();
  // q = 0, u = 0: J = 1/2 ||u_d||^2, compared against direct quadrature
  const double j0 = evaluate_objective(ops, q0, u0);
  double udsq = 0.0;
  const QuadratureRule rule = quadrature_rule(6);
  for (int m = 0; m < 3; ++m)
    for (const auto& gp : time_points(grid.nodes[m], grid.nodes[m + 1], {}, 3)) {
      for (int cell = 0; cell < mesh.n_cells(); ++cell) {
        const CellGeometry g = cell_affine_map(mesh, cell);
        for (const auto& qp : rule.points) {
          const Vec2 x = fem_detail::map_point(g, qp);
          double v[2];
          spec.desired_state(gp.t, x.x, x.y, v);
          udsq += gp.w * 2.0 * g.area * qp.weight * (v[0] * v[0] + v[1] * v[1]);
        }
      }
    }
  REQUIRE(j0 == Catch::Approx(0.5 * udsq).epsilon(1e-12));
  // scaling alpha scales the control term exactly
  std::mt19937_64 rng = oracles::rng(97);
  std::normal_distribution<double> val;
  SpaceTimeField q = ops.make_control_field();
  for (auto& v : q.data) v = val(rng);
  const double j1 = evaluate_objective(ops, q, u0);
  OcpSpec spec2 = spec;
  spec2.alpha = 2.0;
  const OcpOperators ops2(spec2, mesh, sp, grid);
  const double j2 = evaluate_objective(ops2, q, u0);
  REQUIRE(j2 - j0 == Catch::Approx(2.0 * (j1 - j0)).epsilon(1e-12));
}

TEST_CASE("multiplier norm identity") {
  // both routes to ||mu||_{L1(I)}: sum of slab coefficients vs integral of
  // the piecewise-constant density
  const OcpSpec spec = tiny_spec(1.2e-5);
  const TriangleMesh mesh = build_unit_square_mesh(2);
  const TimeGrid grid = TimeGrid::uniform(1.0, 3);
  PdasConfig cfg;
  cfg.minres_rel_tol = 1e-13;
  const KktPoint p = pdas_solve(spec, mesh, grid, cfg);
  REQUIRE(p.converged);
  double coeff_sum = 0.0, density_integral = 0.0;
  for (int m = 0; m < 3; ++m) {
    coeff_sum += p.mu[m];
    density_integral += std::abs(p.mu[m] / grid.k(m)) * grid.k(m);
  }
  REQUIRE(density_integral == Catch::Approx(coeff_sum).epsilon(1e-13));
  REQUIRE(p.residuals.multiplier_norm_gap <= 1e-13);
}

TEST_CASE("invalid configurations rejected") {
  OcpSpec bad = tiny_spec();
  bad.alpha = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  OcpSpec bad2 = tiny_spec();
  bad2.q_lower = {1.0, 0.0};
  bad2.q_upper = {0.5, 1.0};
  REQUIRE_THROWS_AS(bad2.validate(), std::invalid_argument);
  PdasConfig cfg;
  cfg.max_outer = 0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}
