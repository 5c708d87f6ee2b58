#pragma once

// Convergence-study orchestration: space-time error norms against analytic
// truths or nested fine-grid references, EOC computation, reference-solution
// persistence (binary payload + JSON sidecar), and CSV/JSON run records.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stokesoc/examples.hpp"
#include "stokesoc/ocp.hpp"
#include "stokesoc/oracle.hpp"

namespace stokesoc {

// ---------------------------------------------------------------------------
// error norms

// L2(I x Omega) distance between a P0 control field and a space-time
// evaluator; Gauss in time (split at the truth's breakpoints) and a triangle
// rule in space.
inline double error_vs_analytic_control(const SpaceTimeField& q, const TriangleMesh& mesh,
                                        const SpaceTimeFn& truth,
                                        const std::vector<double>& breakpoints = {},
                                        int space_degree = 6, int time_gauss = 3) {
  const DiscreteSpaces sp = build_spaces(mesh);
  const QuadratureRule rule = quadrature_rule(space_degree);
  double acc = 0.0;
  for (int m = 0; m < q.grid.M; ++m) {
    const auto tp = time_points(q.grid.nodes[m], q.grid.nodes[m + 1], breakpoints, time_gauss);
    const double* blk = q.block(m);
    for (int cell = 0; cell < mesh.n_cells(); ++cell) {
      const CellGeometry g = cell_affine_map(mesh, cell);
      const double q0 = blk[sp.control_dof(0, cell)];
      const double q1 = blk[sp.control_dof(1, cell)];
      for (const auto& qp : rule.points) {
        const Vec2 x = fem_detail::map_point(g, qp);
        double tacc = 0.0;
        for (const auto& gp : tp) {
          double v[2];
          truth(gp.t, x.x, x.y, v);
          const double d0 = q0 - v[0], d1 = q1 - v[1];
          tacc += gp.w * (d0 * d0 + d1 * d1);
        }
        acc += 2.0 * g.area * qp.weight * tacc;
      }
    }
  }
  return std::sqrt(acc);
}

// Same for a dG(0) velocity trajectory.
inline double error_vs_analytic_velocity(const SpaceTimeField& u, const TriangleMesh& mesh,
                                         const DiscreteSpaces& sp, const SpaceTimeFn& truth,
                                         const std::vector<double>& breakpoints = {},
                                         int space_degree = 6, int time_gauss = 3) {
  const QuadratureRule rule = quadrature_rule(space_degree);
  std::vector<fem_detail::LocalBasis> basis;
  for (const auto& qp : rule.points) basis.push_back(fem_detail::local_basis(qp));
  double acc = 0.0;
  for (int m = 0; m < u.grid.M; ++m) {
    const auto tp = time_points(u.grid.nodes[m], u.grid.nodes[m + 1], breakpoints, time_gauss);
    const double* blk = u.block(m);
    for (int cell = 0; cell < mesh.n_cells(); ++cell) {
      const CellGeometry g = cell_affine_map(mesh, cell);
      int full[4], interior[4];
      fem_detail::local_dofs(mesh, sp, cell, full, interior);
      for (std::size_t qi = 0; qi < rule.points.size(); ++qi) {
        const Vec2 x = fem_detail::map_point(g, rule.points[qi]);
        double uh[2] = {0.0, 0.0};
        for (int b = 0; b < 4; ++b) {
          if (interior[b] < 0) continue;
          uh[0] += blk[comp_dof(sp, 0, interior[b])] * basis[qi].val[b];
          uh[1] += blk[comp_dof(sp, 1, interior[b])] * basis[qi].val[b];
        }
        double tacc = 0.0;
        for (const auto& gp : tp) {
          double v[2];
          truth(gp.t, x.x, x.y, v);
          const double d0 = uh[0] - v[0], d1 = uh[1] - v[1];
          tacc += gp.w * (d0 * d0 + d1 * d1);
        }
        acc += 2.0 * g.area * rule.points[qi].weight * tacc;
      }
    }
  }
  return std::sqrt(acc);
}

// Exact L2(I x Omega) distance between two P0 control fields on nested
// grids, evaluated by summation over the finer of the two partitions.
inline double error_vs_reference(const SpaceTimeField& q_test, int n_test,
                                 const SpaceTimeField& q_ref, int n_ref) {
  const int M_test = q_test.grid.M, M_ref = q_ref.grid.M;
  if (n_ref % n_test != 0 || M_ref % M_test != 0)
    throw std::invalid_argument(
        "error_vs_reference: grids are not nested (test n=" + std::to_string(n_test) +
        ", M=" + std::to_string(M_test) + " vs reference n=" + std::to_string(n_ref) +
        ", M=" + std::to_string(M_ref) + ")");
  const int nc_ref = 2 * n_ref * n_ref, nc_test = 2 * n_test * n_test;
  const double vol_f = 1.0 / (2.0 * n_ref * n_ref);
  const double k_f = q_ref.grid.T / M_ref;
  double acc = 0.0;
  for (int mf = 0; mf < M_ref; ++mf) {
    const int mt = mf * M_test / M_ref;
    const double* rblk = q_ref.block(mf);
    const double* tblk = q_test.block(mt);
    for (int cf = 0; cf < nc_ref; ++cf) {
      const int ct = parent_cell(cf, n_ref, n_test);
      for (int comp = 0; comp < 2; ++comp) {
        const double d = rblk[comp * nc_ref + cf] - tblk[comp * nc_test + ct];
        acc += vol_f * k_f * d * d;
      }
    }
  }
  return std::sqrt(acc);
}

// Empirical orders of convergence: elementwise log-ratio slopes.
inline std::vector<double> eoc(const std::vector<double>& errors, const std::vector<double>& params) {
  if (errors.size() != params.size() || errors.size() < 2)
    throw std::invalid_argument("eoc: need matching lists of length >= 2");
  std::vector<double> out;
  for (std::size_t l = 1; l < errors.size(); ++l) {
    if (!(errors[l] > 0.0) || !(errors[l - 1] > 0.0) || !(params[l] > 0.0) || !(params[l - 1] > 0.0))
      throw std::invalid_argument("eoc: entries must be positive");
    out.push_back((std::log(errors[l]) - std::log(errors[l - 1])) /
                  (std::log(params[l]) - std::log(params[l - 1])));
  }
  return out;
}

// least-squares slope of log(err) against log(param)
inline double fitted_slope(const std::vector<double>& errors, const std::vector<double>& params) {
  const std::size_t n = errors.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::log(params[i]), y = std::log(errors[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// reference persistence

struct ReferenceSolution {
  std::string example_id;
  int n = 0;
  int M = 0;
  SpaceTimeField control;
  double alpha = 0.0, beta = 0.0;
  double minres_rel_tol = 0.0, tol_feas = 0.0, tol_comp = 0.0;
  std::uint64_t checksum = 0;
};

namespace bench_detail {

inline std::uint64_t fnv1a(const unsigned char* data, std::size_t len) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

} // namespace bench_detail

inline void save_reference(const ReferenceSolution& ref, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_reference: cannot open " + path);
  const char magic[8] = {'S', 'O', 'C', 'R', 'E', 'F', '0', '1'};
  out.write(magic, 8);
  const std::int64_t meta[3] = {ref.n, ref.M, static_cast<std::int64_t>(ref.control.data.size())};
  out.write(reinterpret_cast<const char*>(meta), sizeof(meta));
  out.write(reinterpret_cast<const char*>(ref.control.data.data()),
            static_cast<std::streamsize>(ref.control.data.size() * sizeof(double)));
  const std::uint64_t sum = bench_detail::fnv1a(
      reinterpret_cast<const unsigned char*>(ref.control.data.data()),
      ref.control.data.size() * sizeof(double));
  out.write(reinterpret_cast<const char*>(&sum), sizeof(sum));

  nlohmann::json meta_json;
  meta_json["format_version"] = 1;
  meta_json["example"] = ref.example_id;
  meta_json["n"] = ref.n;
  meta_json["M"] = ref.M;
  meta_json["alpha"] = ref.alpha;
  meta_json["beta"] = ref.beta;
  meta_json["minres_rel_tol"] = ref.minres_rel_tol;
  meta_json["tol_feas"] = ref.tol_feas;
  meta_json["tol_comp"] = ref.tol_comp;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(sum));
  meta_json["checksum"] = std::string(hex);
  std::ofstream side(path + ".json");
  side << meta_json.dump(2) << "\n";
}

inline ReferenceSolution load_reference(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_reference: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::string(magic, 8) != "SOCREF01")
    throw std::runtime_error("load_reference: bad magic in " + path);
  std::int64_t meta[3];
  in.read(reinterpret_cast<char*>(meta), sizeof(meta));
  ReferenceSolution ref;
  ref.n = static_cast<int>(meta[0]);
  ref.M = static_cast<int>(meta[1]);
  const std::size_t count = static_cast<std::size_t>(meta[2]);
  ref.control = SpaceTimeField(TimeGrid::uniform(1.0, ref.M), SpaceTimeField::Kind::control,
                               static_cast<int>(count / ref.M));
  in.read(reinterpret_cast<char*>(ref.control.data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!in) throw std::runtime_error("load_reference: truncated file " + path);
  const std::uint64_t sum = bench_detail::fnv1a(
      reinterpret_cast<const unsigned char*>(ref.control.data.data()), count * sizeof(double));
  if (sum != stored) throw std::runtime_error("load_reference: checksum mismatch in " + path);
  ref.checksum = sum;
  std::ifstream side(path + ".json");
  if (side) {
    nlohmann::json j;
    side >> j;
    ref.example_id = j.value("example", "");
    ref.alpha = j.value("alpha", 0.0);
    ref.beta = j.value("beta", 0.0);
    ref.minres_rel_tol = j.value("minres_rel_tol", 0.0);
    ref.tol_feas = j.value("tol_feas", 0.0);
    ref.tol_comp = j.value("tol_comp", 0.0);
  }
  return ref;
}

// ---------------------------------------------------------------------------
// run records

struct RunRecord {
  std::string example;
  double h = 0.0, k = 0.0;
  int M = 0, n = 0;
  double err_q = std::nan("");
  double err_u = std::nan("");
  double eoc_h = std::nan("");
  double eoc_k = std::nan("");
  int pdas_iters = 0;
  long minres_iters = 0;
  double wall_seconds = 0.0;
  double lk = 0.0;             // ln(T/k)
  double lk_bound_proxy = 0.0; // ln(T/k) (sqrt(k) + h)
  bool converged = false;
  double objective = std::nan("");
  KktResiduals kkt;
};

inline std::string csv_header() {
  return "example,h,k,M,n,err_q,err_u,eoc_h,eoc_k,pdas_iters,minres_iters,wall_seconds,lk,lk_"
         "bound_proxy";
}

namespace bench_detail {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

} // namespace bench_detail

inline std::string csv_row(const RunRecord& r, bool deterministic_output) {
  using bench_detail::fmt_double;
  std::ostringstream os;
  os << r.example << ',' << fmt_double(r.h) << ',' << fmt_double(r.k) << ',' << r.M << ',' << r.n
     << ',' << fmt_double(r.err_q) << ',' << fmt_double(r.err_u) << ',' << fmt_double(r.eoc_h)
     << ',' << fmt_double(r.eoc_k) << ',' << r.pdas_iters << ',' << r.minres_iters << ','
     << fmt_double(deterministic_output ? 0.0 : r.wall_seconds) << ',' << fmt_double(r.lk) << ','
     << fmt_double(r.lk_bound_proxy);
  return os.str();
}

inline nlohmann::json record_to_json(const RunRecord& r, bool deterministic_output) {
  nlohmann::json j;
  j["example"] = r.example;
  j["h"] = r.h;
  j["k"] = r.k;
  j["M"] = r.M;
  j["n"] = r.n;
  if (!std::isnan(r.err_q)) j["err_q"] = r.err_q;
  if (!std::isnan(r.err_u)) j["err_u"] = r.err_u;
  if (!std::isnan(r.eoc_h)) j["eoc_h"] = r.eoc_h;
  if (!std::isnan(r.eoc_k)) j["eoc_k"] = r.eoc_k;
  j["pdas_iters"] = r.pdas_iters;
  j["minres_iters"] = r.minres_iters;
  j["wall_seconds"] = deterministic_output ? 0.0 : r.wall_seconds;
  j["lk"] = r.lk;
  j["lk_bound_proxy"] = r.lk_bound_proxy;
  j["converged"] = r.converged;
  if (!std::isnan(r.objective)) j["objective"] = r.objective;
  j["kkt"] = {{"stationarity_l2", r.kkt.stationarity_l2},
              {"projection_inf", r.kkt.projection_inf},
              {"feasibility", r.kkt.feasibility},
              {"complementarity", r.kkt.complementarity},
              {"mu_min", r.kkt.mu_min},
              {"bound_violation", r.kkt.bound_violation},
              {"multiplier_norm_gap", r.kkt.multiplier_norm_gap}};
  return j;
}

// ---------------------------------------------------------------------------
// study driver

struct StudyConfig {
  ExampleDef example;
  std::vector<int> n_values;          // mesh subdivisions per run
  std::vector<int> M_values;          // slabs per run (same length as n_values)
  PdasConfig pdas;
  bool warm_start_chain = true;       // reuse the previous run's solution
  std::optional<ReferenceSolution> reference; // required when no analytic truth
  bool compute_objective = false;
  std::string eoc_axis = "";          // "h", "k" or "" (no EOC column)
};

// One PDAS solve at the given resolution; errors against the configured
// truth or reference.
inline RunRecord run_single(const StudyConfig& cfg, int n, int M, const WarmStart* warm,
                            KktPoint* point_out = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const TriangleMesh mesh = build_unit_square_mesh(n);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(cfg.example.ocp.T, M);
  const OcpOperators ops(cfg.example.ocp, mesh, sp, grid);
  const SchurPrecond precond = build_preconditioner(ops);
  KktPoint point = pdas_solve(ops, cfg.pdas, precond, warm);

  RunRecord rec;
  rec.example = cfg.example.id;
  rec.n = n;
  rec.M = M;
  rec.h = 1.0 / n;
  rec.k = cfg.example.ocp.T / M;
  rec.lk = std::log(cfg.example.ocp.T / rec.k);
  rec.lk_bound_proxy = rec.lk * (std::sqrt(rec.k) + rec.h);
  rec.pdas_iters = point.outer_iterations;
  rec.minres_iters = point.minres_iterations;
  rec.converged = point.converged;
  rec.kkt = point.residuals;
  if (cfg.example.truth) {
    rec.err_q = error_vs_analytic_control(point.q, mesh, cfg.example.truth->control,
                                          cfg.example.truth->time_breakpoints);
    rec.err_u = error_vs_analytic_velocity(point.u, mesh, sp, cfg.example.truth->state,
                                           cfg.example.truth->time_breakpoints);
  } else if (cfg.reference) {
    rec.err_q = error_vs_reference(point.q, n, cfg.reference->control, cfg.reference->n);
  }
  if (cfg.compute_objective) rec.objective = evaluate_objective(ops, point.q, point.u);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (point_out) *point_out = std::move(point);
  return rec;
}

// Example-1 time grids must place the active-set boundaries 1/4 and 3/4 at
// slab midpoints or nodes; other alignments trigger superconvergence
// artifacts and are rejected. Applies to the analytic example only; the
// reference-based variants follow the published grids without restriction.
inline void validate_example1_time_grid(int M) {
  const bool midpoint_aligned = (M % 4) == 2;
  const bool node_aligned = (M % 4) == 0;
  if (!midpoint_aligned && !node_aligned)
    throw std::invalid_argument(
        "example1 time grid with M = " + std::to_string(M) +
        " places t = 1/4, 3/4 neither at slab midpoints nor at nodes; use M in {6*3^j} or 4|M");
}

inline std::vector<RunRecord> run_convergence_study(const StudyConfig& cfg) {
  if (cfg.n_values.size() != cfg.M_values.size() || cfg.n_values.empty())
    throw std::invalid_argument("run_convergence_study: need matching non-empty n/M lists");
  if (!cfg.example.truth && !cfg.reference)
    throw std::invalid_argument("run_convergence_study: example " + cfg.example.id +
                                " needs a reference solution");
  if (cfg.example.id == "example1")
    for (int M : cfg.M_values) validate_example1_time_grid(M);
  if (cfg.reference)
    for (std::size_t i = 0; i < cfg.n_values.size(); ++i)
      if (cfg.reference->n % cfg.n_values[i] != 0 || cfg.reference->M % cfg.M_values[i] != 0)
        throw std::invalid_argument("run_convergence_study: run grid not nested in the reference");

  std::vector<RunRecord> records;
  KktPoint prev_point;
  int prev_n = 0;
  for (std::size_t i = 0; i < cfg.n_values.size(); ++i) {
    WarmStart warm;
    const WarmStart* warm_ptr = nullptr;
    if (cfg.warm_start_chain && i > 0) {
      warm.control = prev_point.q;
      warm.mu = prev_point.mu;
      warm.n = prev_n;
      warm_ptr = &warm;
    }
    RunRecord rec;
    try {
      rec = run_single(cfg, cfg.n_values[i], cfg.M_values[i], warm_ptr, &prev_point);
      prev_n = cfg.n_values[i];
    } catch (const std::exception& e) {
      rec.example = cfg.example.id;
      rec.n = cfg.n_values[i];
      rec.M = cfg.M_values[i];
      rec.h = 1.0 / rec.n;
      rec.k = cfg.example.ocp.T / rec.M;
      rec.converged = false;
      records.push_back(rec);
      continue; // record the failure, keep sweeping
    }
    records.push_back(rec);
  }
  // EOC along the requested axis
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (!(records[i].err_q > 0.0) || !(records[i - 1].err_q > 0.0)) continue;
    const double ratio = std::log(records[i].err_q) - std::log(records[i - 1].err_q);
    if (cfg.eoc_axis == "h" && records[i].h != records[i - 1].h)
      records[i].eoc_h = ratio / (std::log(records[i].h) - std::log(records[i - 1].h));
    if (cfg.eoc_axis == "k" && records[i].k != records[i - 1].k)
      records[i].eoc_k = ratio / (std::log(records[i].k) - std::log(records[i - 1].k));
  }
  return records;
}

inline ReferenceSolution compute_reference(const ExampleDef& example, int n_ref, int M_ref,
                                           const PdasConfig& cfg) {
  const TriangleMesh mesh = build_unit_square_mesh(n_ref);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(example.ocp.T, M_ref);
  const OcpOperators ops(example.ocp, mesh, sp, grid);
  const SchurPrecond precond = build_preconditioner(ops);
  const KktPoint point = pdas_solve(ops, cfg, precond);
  if (!point.converged)
    throw std::runtime_error("compute_reference: PDAS did not converge for " + example.id);
  ReferenceSolution ref;
  ref.example_id = example.id;
  ref.n = n_ref;
  ref.M = M_ref;
  ref.control = point.q;
  ref.alpha = example.ocp.alpha;
  ref.beta = example.ocp.beta;
  ref.minres_rel_tol = cfg.minres_rel_tol;
  ref.tol_feas = cfg.resolved_tol_feas(example.ocp.beta);
  ref.tol_comp = cfg.resolved_tol_comp(example.ocp.beta);
  ref.checksum = bench_detail::fnv1a(
      reinterpret_cast<const unsigned char*>(ref.control.data.data()),
      ref.control.data.size() * sizeof(double));
  return ref;
}

inline void write_records_csv(const std::vector<RunRecord>& records, const std::string& path,
                              bool deterministic_output) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_records_csv: cannot open " + path);
  out << csv_header() << "\n";
  for (const auto& r : records) out << csv_row(r, deterministic_output) << "\n";
}

inline void write_records_json(const std::vector<RunRecord>& records, const std::string& path,
                               bool deterministic_output, const nlohmann::json& config_echo = {}) {
  nlohmann::json j;
  if (!config_echo.is_null() && !config_echo.empty()) j["config"] = config_echo;
  j["records"] = nlohmann::json::array();
  for (const auto& r : records) j["records"].push_back(record_to_json(r, deterministic_output));
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_records_json: cannot open " + path);
  out << j.dump(2) << "\n";
}

} // namespace stokesoc
