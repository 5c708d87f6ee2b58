// Command-line front end: single transient/stationary solves, optimal
// control solves, reference generation, and convergence sweeps with
// machine-readable CSV/JSON outputs.
//
// Exit codes: 0 success/converged, 2 solver non-convergence, 3 bad
// configuration.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stokesoc/bench.hpp"
#include "stokesoc/examples.hpp"
#include "stokesoc/ocp.hpp"

namespace fs = std::filesystem;
using namespace stokesoc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitSolver = 2;
constexpr int kExitConfig = 3;

struct RunConfig {
  std::string example = "1";
  std::string profile = "sin";
  std::vector<std::string> h_list;
  std::vector<std::string> k_list;
  double alpha = -1.0; // < 0: example default
  double beta = -1.0;
  std::vector<double> q_upper;
  std::vector<double> q_lower;
  std::string out_dir = "out";
  std::string ref_path;
  int workers = 1;
  int max_outer = 60;
  double tol_feas = -1.0;
  double tol_comp = -1.0;
  double tol_proj = 1e-10;
  double minres_tol = 1e-10;
  bool warm_start = true;
  bool deterministic_output = false;
};

// accepts "0.125", "1/8", "2^-3"
double parse_value(const std::string& s) {
  const auto slash = s.find('/');
  if (slash != std::string::npos)
    return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
  const auto caret = s.find('^');
  if (caret != std::string::npos)
    return std::pow(std::stod(s.substr(0, caret)), std::stod(s.substr(caret + 1)));
  return std::stod(s);
}

std::vector<int> to_subdivisions(const std::vector<std::string>& hs) {
  std::vector<int> out;
  for (const auto& s : hs) {
    const double h = parse_value(s);
    if (!(h > 0.0) || h > 1.0) throw CLI::ValidationError("--h", "h must lie in (0, 1]");
    const int n = static_cast<int>(std::lround(1.0 / h));
    if (std::abs(n * h - 1.0) > 1e-9)
      throw CLI::ValidationError("--h", "h must be the reciprocal of an integer: " + s);
    out.push_back(n);
  }
  return out;
}

std::vector<int> to_slab_counts(const std::vector<std::string>& ks, double T) {
  std::vector<int> out;
  for (const auto& s : ks) {
    const double k = parse_value(s);
    if (!(k > 0.0) || k > T) throw CLI::ValidationError("--k", "k must lie in (0, T]");
    const int M = static_cast<int>(std::lround(T / k));
    if (std::abs(M * k - T) > 1e-9 * T)
      throw CLI::ValidationError("--k", "k must divide the horizon T: " + s);
    out.push_back(M);
  }
  return out;
}

ExampleDef configured_example(const RunConfig& rc) {
  ExampleDef def = example_by_id(std::stoi(rc.example));
  if (rc.alpha > 0.0) def.ocp.alpha = rc.alpha;
  if (rc.beta > 0.0) def.ocp.beta = rc.beta;
  if (!rc.q_upper.empty()) {
    if (rc.q_upper.size() != 2) throw CLI::ValidationError("--qbound-upper", "need two components");
    def.ocp.q_upper = {rc.q_upper[0], rc.q_upper[1]};
    def.truth.reset(); // overridden bounds invalidate any closed-form optimum
  }
  if (!rc.q_lower.empty()) {
    if (rc.q_lower.size() != 2) throw CLI::ValidationError("--qbound-lower", "need two components");
    def.ocp.q_lower = {rc.q_lower[0], rc.q_lower[1]};
    def.truth.reset();
  }
  if (rc.alpha > 0.0 || rc.beta > 0.0) def.truth.reset();
  def.ocp.validate();
  return def;
}

PdasConfig configured_pdas(const RunConfig& rc) {
  PdasConfig cfg;
  cfg.max_outer = rc.max_outer;
  cfg.minres_rel_tol = rc.minres_tol;
  cfg.tol_feas = rc.tol_feas;
  cfg.tol_comp = rc.tol_comp;
  cfg.tol_proj = rc.tol_proj;
  cfg.validate();
  return cfg;
}

nlohmann::json config_echo(const RunConfig& rc) {
  nlohmann::json j;
  j["example"] = rc.example;
  j["profile"] = rc.profile;
  j["h"] = rc.h_list;
  j["k"] = rc.k_list;
  j["alpha_override"] = rc.alpha;
  j["beta_override"] = rc.beta;
  j["q_upper"] = rc.q_upper;
  j["q_lower"] = rc.q_lower;
  j["out"] = rc.out_dir;
  j["ref"] = rc.ref_path;
  j["workers"] = rc.workers;
  j["max_outer"] = rc.max_outer;
  j["tol_feas"] = rc.tol_feas;
  j["tol_comp"] = rc.tol_comp;
  j["tol_proj"] = rc.tol_proj;
  j["minres_tol"] = rc.minres_tol;
  j["warm_start"] = rc.warm_start;
  j["deterministic_output"] = rc.deterministic_output;
  return j;
}

int cmd_solve_state(const RunConfig& rc) {
  fs::create_directories(rc.out_dir);
  if (rc.example == "manufactured-stationary") {
    const auto ms = manufactured_stationary();
    std::ofstream csv(fs::path(rc.out_dir) / "stationary.csv");
    csv << "h,n,err_u_l2,err_u_h1,err_p_l2\n";
    for (int n : to_subdivisions(rc.h_list)) {
      const TriangleMesh mesh = build_unit_square_mesh(n);
      const DiscreteSpaces sp = build_spaces(mesh);
      const auto sol = solve_stationary(mesh, sp, ms.source);
      csv << 1.0 / n << ',' << n << ','
          << l2_error_velocity(mesh, sp, sol.velocity, ms.velocity) << ','
          << h1_seminorm_error_velocity(mesh, sp, sol.velocity, ms.velocity_grad) << ','
          << l2_error_pressure(mesh, sp, sol.pressure, ms.pressure) << "\n";
    }
    return kExitOk;
  }
  if (rc.example != "manufactured-stokes")
    throw CLI::ValidationError("--example",
                               "solve-state expects manufactured-stokes or manufactured-stationary");
  const auto ms = manufactured_stokes(rc.profile);
  const auto ns = to_subdivisions(rc.h_list);
  const auto Ms = to_slab_counts(rc.k_list, 1.0);
  std::ofstream summary(fs::path(rc.out_dir) / "summary.csv");
  summary << "h,k,n,M,err_l2,max_div_residual\n";
  for (int n : ns)
    for (int M : Ms) {
      const TriangleMesh mesh = build_unit_square_mesh(n);
      const DiscreteSpaces sp = build_spaces(mesh);
      const TimeGrid grid = TimeGrid::uniform(1.0, M);
      const StepOperator op = build_step_operator(mesh, sp, 1.0 / M);
      std::vector<std::vector<double>> loads;
      for (int m = 0; m < M; ++m)
        loads.push_back(
            assemble_timeslab_load(mesh, sp, ms.source, grid.nodes[m], grid.nodes[m + 1]));
      SweepReport rep;
      const SpaceTimeField u = solve_state(op, grid, loads, nullptr, &rep);
      char name[64];
      std::snprintf(name, sizeof(name), "state_n%d_M%d.csv", n, M);
      std::ofstream csv(fs::path(rc.out_dir) / name);
      csv << "m,t,velocity_l2_norm,slab_error\n";
      const CsrMatrix mass = assemble_velocity_mass(mesh, sp);
      double total_err_sq = 0.0;
      for (int m = 0; m < M; ++m) {
        const double* blk = u.block(m);
        const auto mb = spmv(mass, std::vector<double>(blk, blk + sp.n_u));
        double norm_sq = 0.0;
        for (int i = 0; i < sp.n_u; ++i) norm_sq += mb[i] * blk[i];
        double err_sq = 0.0;
        for (const auto& gp : time_points(grid.nodes[m], grid.nodes[m + 1], {}, 3)) {
          auto exact_t = [&](double x, double y, double out[2]) { ms.velocity(gp.t, x, y, out); };
          const double e =
              l2_error_velocity(mesh, sp, std::vector<double>(blk, blk + sp.n_u), exact_t);
          err_sq += gp.w * e * e;
        }
        total_err_sq += err_sq;
        csv << m + 1 << ',' << grid.nodes[m + 1] << ',' << std::sqrt(norm_sq) << ','
            << std::sqrt(err_sq) << "\n";
      }
      summary << 1.0 / n << ',' << 1.0 / M << ',' << n << ',' << M << ','
              << std::sqrt(total_err_sq) << ',' << rep.max_divergence_residual << "\n";
    }
  return kExitOk;
}

int cmd_solve_ocp(const RunConfig& rc) {
  fs::create_directories(rc.out_dir);
  const ExampleDef def = configured_example(rc);
  const PdasConfig cfg = configured_pdas(rc);
  const auto ns = to_subdivisions(rc.h_list);
  const auto Ms = to_slab_counts(rc.k_list, def.ocp.T);
  if (ns.size() != 1 || Ms.size() != 1)
    throw CLI::ValidationError("--h/--k", "solve-ocp expects exactly one h and one k");
  const TriangleMesh mesh = build_unit_square_mesh(ns[0]);
  const DiscreteSpaces sp = build_spaces(mesh);
  const TimeGrid grid = TimeGrid::uniform(def.ocp.T, Ms[0]);
  const OcpOperators ops(def.ocp, mesh, sp, grid);
  const SchurPrecond precond = build_preconditioner(ops);
  const KktPoint point = pdas_solve(ops, cfg, precond);

  // control dump in the reference format plus the multiplier trajectory
  ReferenceSolution dump;
  dump.example_id = def.id;
  dump.n = ns[0];
  dump.M = Ms[0];
  dump.control = point.q;
  dump.alpha = def.ocp.alpha;
  dump.beta = def.ocp.beta;
  dump.minres_rel_tol = cfg.minres_rel_tol;
  dump.tol_feas = cfg.resolved_tol_feas(def.ocp.beta);
  dump.tol_comp = cfg.resolved_tol_comp(def.ocp.beta);
  save_reference(dump, (fs::path(rc.out_dir) / "control.bin").string());
  {
    std::ofstream csv(fs::path(rc.out_dir) / "multipliers.csv");
    csv << "m,t,mu_coefficient,mu_density,trajectory,state_active\n";
    for (int m = 0; m < Ms[0]; ++m)
      csv << m + 1 << ',' << grid.nodes[m + 1] << ',' << point.mu[m] << ','
          << point.mu[m] / grid.k(m) << ',' << point.trajectory[m] << ','
          << static_cast<int>(point.active.state.empty() ? 0 : point.active.state[m]) << "\n";
  }
  nlohmann::json report;
  report["config"] = config_echo(rc);
  report["converged"] = point.converged;
  report["outer_iterations"] = point.outer_iterations;
  report["minres_iterations"] = point.minres_iterations;
  report["kkt"] = {{"stationarity_l2", point.residuals.stationarity_l2},
                   {"projection_inf", point.residuals.projection_inf},
                   {"feasibility", point.residuals.feasibility},
                   {"complementarity", point.residuals.complementarity},
                   {"mu_min", point.residuals.mu_min},
                   {"bound_violation", point.residuals.bound_violation},
                   {"multiplier_norm_gap", point.residuals.multiplier_norm_gap}};
  report["objective"] = evaluate_objective(ops, point.q, point.u);
  if (def.truth) {
    report["err_q"] = error_vs_analytic_control(point.q, mesh, def.truth->control,
                                                def.truth->time_breakpoints);
    report["err_u"] = error_vs_analytic_velocity(point.u, mesh, sp, def.truth->state,
                                                 def.truth->time_breakpoints);
  }
  std::ofstream out(fs::path(rc.out_dir) / "report.json");
  out << report.dump(2) << "\n";
  return point.converged ? kExitOk : kExitSolver;
}

int cmd_reference(const RunConfig& rc) {
  const ExampleDef def = configured_example(rc);
  const PdasConfig cfg = configured_pdas(rc);
  const auto ns = to_subdivisions(rc.h_list);
  const auto Ms = to_slab_counts(rc.k_list, def.ocp.T);
  if (ns.size() != 1 || Ms.size() != 1)
    throw CLI::ValidationError("--h/--k", "reference expects exactly one h and one k");
  if (rc.ref_path.empty()) throw CLI::ValidationError("--ref", "output reference path required");
  const ReferenceSolution ref = compute_reference(def, ns[0], Ms[0], cfg);
  if (const auto parent = fs::path(rc.ref_path).parent_path(); !parent.empty())
    fs::create_directories(parent);
  save_reference(ref, rc.ref_path);
  std::cout << "reference written to " << rc.ref_path << " (n=" << ref.n << ", M=" << ref.M
            << ")\n";
  return kExitOk;
}

int cmd_convergence(const RunConfig& rc) {
  fs::create_directories(rc.out_dir);
  const ExampleDef def = configured_example(rc);
  StudyConfig study;
  study.example = def;
  study.pdas = configured_pdas(rc);
  const auto ns = to_subdivisions(rc.h_list);
  const auto Ms = to_slab_counts(rc.k_list, def.ocp.T);
  if (ns.size() > 1 && Ms.size() > 1)
    throw CLI::ValidationError("--h/--k", "vary either h or k, not both");
  study.eoc_axis = ns.size() > 1 ? "h" : (Ms.size() > 1 ? "k" : "");
  for (int n : ns)
    for (int M : Ms) {
      study.n_values.push_back(n);
      study.M_values.push_back(M);
    }
  if (!def.truth) {
    if (rc.ref_path.empty())
      throw CLI::ValidationError("--ref", "example " + def.id + " needs a reference solution");
    study.reference = load_reference(rc.ref_path);
    if (study.reference->example_id != def.id)
      throw CLI::ValidationError("--ref", "reference belongs to " + study.reference->example_id);
  }
  study.warm_start_chain = rc.warm_start && rc.workers == 1;

  std::vector<RunRecord> records;
  if (rc.workers <= 1 || study.n_values.size() <= 1) {
    records = run_convergence_study(study);
  } else {
    // independent runs, deterministic merge sorted by (h, k)
    records.resize(study.n_values.size());
    std::vector<std::thread> pool;
    std::size_t next = 0;
    std::mutex mtx;
    for (int w = 0; w < std::min<int>(rc.workers, static_cast<int>(study.n_values.size())); ++w)
      pool.emplace_back([&]() {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mtx);
            if (next >= study.n_values.size()) return;
            i = next++;
          }
          StudyConfig single = study;
          single.n_values = {study.n_values[i]};
          single.M_values = {study.M_values[i]};
          single.eoc_axis = "";
          single.warm_start_chain = false;
          records[i] = run_convergence_study(single)[0];
        }
      });
    for (auto& t : pool) t.join();
    for (std::size_t i = 1; i < records.size(); ++i) {
      if (!(records[i].err_q > 0.0) || !(records[i - 1].err_q > 0.0)) continue;
      const double ratio = std::log(records[i].err_q) - std::log(records[i - 1].err_q);
      if (study.eoc_axis == "h")
        records[i].eoc_h = ratio / (std::log(records[i].h) - std::log(records[i - 1].h));
      if (study.eoc_axis == "k")
        records[i].eoc_k = ratio / (std::log(records[i].k) - std::log(records[i - 1].k));
    }
  }
  write_records_csv(records, (fs::path(rc.out_dir) / "records.csv").string(),
                    rc.deterministic_output);
  write_records_json(records, (fs::path(rc.out_dir) / "records.json").string(),
                     rc.deterministic_output, config_echo(rc));
  for (const auto& r : records)
    if (!r.converged) return kExitSolver;
  return kExitOk;
}

void add_common(CLI::App* cmd, RunConfig& rc) {
  cmd->set_help_flag("--help", "print help"); // frees -h for the mesh size
  cmd->add_option("--example", rc.example,
                  "problem id: 1|2|3|manufactured-stokes|manufactured-stationary");
  cmd->add_option("--profile", rc.profile, "manufactured time profile: sin|linear|zero");
  cmd->add_option("--h", rc.h_list, "mesh sizes (comma list; 0.125, 1/8 or 2^-3)")
      ->delimiter(',');
  cmd->add_option("--k", rc.k_list, "time steps (comma list)")->delimiter(',');
  cmd->add_option("--alpha", rc.alpha, "regularization weight override");
  cmd->add_option("--beta", rc.beta, "state-constraint level override");
  cmd->add_option("--qbound-upper", rc.q_upper, "upper control bound (two components)")
      ->delimiter(',');
  cmd->add_option("--qbound-lower", rc.q_lower, "lower control bound (two components)")
      ->delimiter(',');
  cmd->add_option("--out", rc.out_dir, "output directory");
  cmd->add_option("--ref", rc.ref_path, "reference solution path");
  cmd->add_option("--workers", rc.workers, "concurrent runs in sweeps")->check(CLI::PositiveNumber);
  cmd->add_option("--max-outer", rc.max_outer, "PDAS outer iteration limit");
  cmd->add_option("--tol-feas", rc.tol_feas, "feasibility tolerance (default 1e-8 max(1,beta))");
  cmd->add_option("--tol-comp", rc.tol_comp, "complementarity tolerance");
  cmd->add_option("--tol-proj", rc.tol_proj, "projection-identity tolerance");
  cmd->add_option("--tol-minres", rc.minres_tol, "MINRES relative tolerance");
  cmd->add_flag("--warm-start,!--no-warm-start", rc.warm_start,
                "chain sweep levels through warm starts (workers=1 only)");
  cmd->add_flag("--deterministic-output", rc.deterministic_output,
                "suppress wall-clock fields for byte-identical outputs");
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"transient Stokes optimal control solver and benchmark harness"};
  app.set_help_flag("--help", "print help");
  app.set_config("--config", "", "flat key=value configuration file");
  app.require_subcommand(1);
  RunConfig rc;
  auto* solve_state_cmd =
      app.add_subcommand("solve-state", "dG(0) transient or stationary Stokes solve");
  auto* solve_ocp_cmd = app.add_subcommand("solve-ocp", "one PDAS optimal control solve");
  auto* convergence_cmd = app.add_subcommand("convergence", "convergence sweep with EOC columns");
  auto* reference_cmd = app.add_subcommand("reference", "compute and persist a reference solution");
  for (auto* cmd : {solve_state_cmd, solve_ocp_cmd, convergence_cmd, reference_cmd})
    add_common(cmd, rc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (solve_state_cmd->parsed()) return cmd_solve_state(rc);
    if (solve_ocp_cmd->parsed()) return cmd_solve_ocp(rc);
    if (convergence_cmd->parsed()) return cmd_convergence(rc);
    if (reference_cmd->parsed()) return cmd_reference(rc);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitConfig;
}
