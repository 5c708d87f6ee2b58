#pragma once

// Benchmark problem definitions: the analytic smooth case with a known
// optimal triple, the rough-data case measured against fine-grid references,
// the control-constrained variant of the smooth case, and the manufactured
// transient/stationary Stokes data used by the solver benchmarks.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stokesoc/ocp.hpp"

namespace stokesoc {

struct AnalyticTruth {
  SpaceTimeFn control;              // optimal control
  SpaceTimeFn state;                // optimal state
  SpaceTimeFn adjoint;              // optimal adjoint
  std::function<double(double)> multiplier_density; // mu as an L1(I) density
  std::vector<double> time_breakpoints;
};

struct ExampleDef {
  std::string id;
  OcpSpec ocp;
  std::optional<AnalyticTruth> truth;
  int reference_M = 0; // fine-grid reference resolution for error evaluation
  int reference_n = 0;
  std::string notes;
};

namespace ex_detail {

constexpr double kPi = 3.14159265358979323846;

// Fourier forms of sin^4(pi x) and cos(pi x) sin^3(pi x) and their even
// derivatives; these make the bilaplacian of the weight field exact.
inline double f4(double x) {
  return (3.0 - 4.0 * std::cos(2.0 * kPi * x) + std::cos(4.0 * kPi * x)) / 8.0;
}
inline double f4_dd(double x) {
  return 2.0 * kPi * kPi * (std::cos(2.0 * kPi * x) - std::cos(4.0 * kPi * x));
}
inline double f4_dddd(double x) {
  const double p4 = kPi * kPi * kPi * kPi;
  return -8.0 * p4 * std::cos(2.0 * kPi * x) + 32.0 * p4 * std::cos(4.0 * kPi * x);
}
inline double g3(double x) {
  return (2.0 * std::sin(2.0 * kPi * x) - std::sin(4.0 * kPi * x)) / 8.0;
}
inline double g3_dd(double x) {
  return kPi * kPi * (-std::sin(2.0 * kPi * x) + 2.0 * std::sin(4.0 * kPi * x));
}
inline double g3_dddd(double x) {
  const double p4 = kPi * kPi * kPi * kPi;
  return 4.0 * p4 * std::sin(2.0 * kPi * x) - 32.0 * p4 * std::sin(4.0 * kPi * x);
}

inline double normalization() { return 64.0 * std::sqrt(2.0) / (5.0 * std::sqrt(7.0)); }

// y = c (-f4(x1) g3(x2), g3(x1) f4(x2)): divergence free with ||y||_{L2} = 1
inline void weight_y(double x1, double x2, double out[2]) {
  const double c = normalization();
  out[0] = -c * f4(x1) * g3(x2);
  out[1] = c * g3(x1) * f4(x2);
}

inline void weight_y_laplacian(double x1, double x2, double out[2]) {
  const double c = normalization();
  out[0] = -c * (f4_dd(x1) * g3(x2) + f4(x1) * g3_dd(x2));
  out[1] = c * (g3_dd(x1) * f4(x2) + g3(x1) * f4_dd(x2));
}

inline void weight_y_bilaplacian(double x1, double x2, double out[2]) {
  const double c = normalization();
  out[0] = -c * (f4_dddd(x1) * g3(x2) + 2.0 * f4_dd(x1) * g3_dd(x2) + f4(x1) * g3_dddd(x2));
  out[1] = c * (g3_dddd(x1) * f4(x2) + 2.0 * g3_dd(x1) * f4_dd(x2) + g3(x1) * f4_dddd(x2));
}

// time profile: polynomial ramp, plateau at 1 on [1/4, 3/4], symmetric ramp down
inline double phi1(double t) {
  if (t < 0.25) return 48.0 * t * t - 128.0 * t * t * t;
  if (t <= 0.75) return 1.0;
  const double s = 1.0 - t;
  return 48.0 * s * s - 128.0 * s * s * s;
}
inline double phi1_d(double t) {
  if (t < 0.25) return 96.0 * t - 384.0 * t * t;
  if (t <= 0.75) return 0.0;
  const double s = 1.0 - t;
  return -(96.0 * s - 384.0 * s * s);
}
inline double phi1_dd(double t) {
  if (t < 0.25) return 96.0 - 768.0 * t;
  if (t <= 0.75) return 0.0;
  const double s = 1.0 - t;
  return 96.0 - 768.0 * s;
}

inline double mu1_density(double t) { return (t >= 0.25 && t <= 0.75) ? 1e3 : 0.0; }

// rough time profile with square-root onsets
inline double phi2(double t) {
  if (t >= 0.2 && t <= 0.4) return std::sqrt(t - 0.2) * (0.4 - t);
  if (t >= 0.6 && t <= 0.8) return -std::sqrt(t - 0.6) * (0.8 - t);
  return 0.0;
}

} // namespace ex_detail

// Smooth analytic case: weight y, plateau profile, alpha = 1, beta = 1,
// no control bounds; the optimal triple is known in closed form.
inline ExampleDef example1() {
  using namespace ex_detail;
  ExampleDef def;
  def.id = "example1";
  def.ocp.alpha = 1.0;
  def.ocp.beta = 1.0;
  def.ocp.T = 1.0;
  def.ocp.weight = weight_y;
  def.ocp.weight_quad_degree = 6;
  def.ocp.desired_breakpoints = {0.25, 0.75};
  // u_d = (phi - phi'' + mu) y + phi lap^2 y
  def.ocp.desired_state = [](double t, double x1, double x2, double out[2]) {
    double y[2], bly[2];
    weight_y(x1, x2, y);
    weight_y_bilaplacian(x1, x2, bly);
    const double a = phi1(t) - phi1_dd(t) + mu1_density(t);
    const double b = phi1(t);
    out[0] = a * y[0] + b * bly[0];
    out[1] = a * y[1] + b * bly[1];
  };
  AnalyticTruth truth;
  truth.time_breakpoints = {0.25, 0.75};
  truth.state = [](double t, double x1, double x2, double out[2]) {
    weight_y(x1, x2, out);
    out[0] *= phi1(t);
    out[1] *= phi1(t);
  };
  // q = phi' y - phi lap y, z = -q
  truth.control = [](double t, double x1, double x2, double out[2]) {
    double y[2], ly[2];
    weight_y(x1, x2, y);
    weight_y_laplacian(x1, x2, ly);
    out[0] = phi1_d(t) * y[0] - phi1(t) * ly[0];
    out[1] = phi1_d(t) * y[1] - phi1(t) * ly[1];
  };
  truth.adjoint = [truth_q = truth.control](double t, double x1, double x2, double out[2]) {
    truth_q(t, x1, x2, out);
    out[0] = -out[0];
    out[1] = -out[1];
  };
  truth.multiplier_density = mu1_density;
  def.truth = truth;
  def.reference_M = 0; // analytic errors, no reference needed
  def.reference_n = 0;
  def.notes = "smooth data, state constraint active on [1/4, 3/4]";
  return def;
}

// Rough data: discontinuous rotational weight supported on a disk,
// square-root time profile, alpha = 1e-4; errors against fine references.
inline ExampleDef example2() {
  using namespace ex_detail;
  ExampleDef def;
  def.id = "example2";
  def.ocp.alpha = 1e-4;
  def.ocp.beta = 1.0;
  def.ocp.T = 1.0;
  def.ocp.weight = [](double x1, double x2, double out[2]) {
    const double dx = x1 - 0.5, dy = x2 - 0.5;
    if (dx * dx + dy * dy <= 0.125) {
      out[0] = dy;
      out[1] = -dx;
    } else {
      out[0] = out[1] = 0.0;
    }
  };
  def.ocp.weight_quad_degree = 8; // indicator integrated without subcell splitting
  def.ocp.desired_breakpoints = {0.2, 0.4, 0.6, 0.8};
  def.ocp.desired_state = [](double t, double x1, double x2, double out[2]) {
    const double a = 5e4 * phi2(t);
    const double s1 = std::sin(kPi * x1), s2 = std::sin(kPi * x2);
    out[0] = a * s2 * std::cos(kPi * x2) * s1 * s1;
    out[1] = -a * s1 * std::cos(kPi * x1) * s2 * s2;
  };
  def.reference_M = 240;
  def.reference_n = 32;
  def.notes = "rough data, numerical reference errors";
  return def;
}

// The smooth case augmented by the upper control bound q <= 200 per
// component; everything else as in example1, errors against references.
inline ExampleDef example3() {
  ExampleDef def = example1();
  def.id = "example3";
  def.ocp.q_upper = {200.0, 200.0};
  def.truth.reset(); // bound makes the closed-form triple no longer optimal
  def.reference_M = 160;
  def.reference_n = 32;
  def.notes = "example1 data with the control bound q <= 200";
  return def;
}

// Manufactured transient Stokes data: u = g(t) curl(sin^2(pi x) sin^2(pi y)),
// p = g(t) cos(pi x) cos(pi y), f = du/dt - lap u + grad p. Two time
// profiles keep the k- and h-studies in their asymptotic regimes.
struct ManufacturedStokes {
  SpaceTimeFn velocity;
  SpaceTimeFn source;
  std::function<double(double, double, double)> pressure;
  std::string id;
};

namespace ex_detail {

inline void stokes_u_space(double x, double y, double out[2]) {
  const double sx = std::sin(kPi * x), sy = std::sin(kPi * y);
  out[0] = kPi * sx * sx * std::sin(2.0 * kPi * y);
  out[1] = -kPi * std::sin(2.0 * kPi * x) * sy * sy;
}

inline void stokes_neg_lap_plus_gradp(double x, double y, double out[2]) {
  const double sx = std::sin(kPi * x), sy = std::sin(kPi * y);
  const double s2x = std::sin(2.0 * kPi * x), s2y = std::sin(2.0 * kPi * y);
  const double c2x = std::cos(2.0 * kPi * x), c2y = std::cos(2.0 * kPi * y);
  const double pi3 = kPi * kPi * kPi;
  const double lap1 = 2.0 * pi3 * c2x * s2y - 4.0 * pi3 * sx * sx * s2y;
  const double lap2 = 4.0 * pi3 * s2x * sy * sy - 2.0 * pi3 * s2x * c2y;
  out[0] = -lap1 - kPi * std::sin(kPi * x) * std::cos(kPi * y);
  out[1] = -lap2 - kPi * std::cos(kPi * x) * std::sin(kPi * y);
}

} // namespace ex_detail

inline ManufacturedStokes manufactured_stokes(const std::string& profile) {
  using namespace ex_detail;
  std::function<double(double)> g, gd;
  if (profile == "sin") { // strong time variation for k-studies
    g = [](double t) { return std::sin(2.0 * kPi * t); };
    gd = [](double t) { return 2.0 * kPi * std::cos(2.0 * kPi * t); };
  } else if (profile == "linear") { // gentle time variation for h-studies
    g = [](double t) { return t; };
    gd = [](double) { return 1.0; };
  } else if (profile == "zero") {
    g = [](double) { return 0.0; };
    gd = [](double) { return 0.0; };
  } else {
    throw std::invalid_argument("manufactured_stokes: unknown profile " + profile);
  }
  ManufacturedStokes ms;
  ms.id = "manufactured-stokes-" + profile;
  ms.velocity = [g](double t, double x, double y, double out[2]) {
    stokes_u_space(x, y, out);
    out[0] *= g(t);
    out[1] *= g(t);
  };
  ms.source = [g, gd](double t, double x, double y, double out[2]) {
    double us[2], rest[2];
    stokes_u_space(x, y, us);
    stokes_neg_lap_plus_gradp(x, y, rest);
    out[0] = gd(t) * us[0] + g(t) * rest[0];
    out[1] = gd(t) * us[1] + g(t) * rest[1];
  };
  ms.pressure = [g](double t, double x, double y) {
    return g(t) * std::cos(kPi * x) * std::cos(kPi * y);
  };
  return ms;
}

struct ManufacturedStationary {
  VelocityFn velocity;
  VelocityGradFn velocity_grad;
  ScalarFn pressure;
  VelocityFn source;
};

inline ManufacturedStationary manufactured_stationary() {
  using namespace ex_detail;
  ManufacturedStationary ms;
  ms.velocity = stokes_u_space;
  ms.velocity_grad = [](double x, double y, double out[4]) {
    const double sx = std::sin(kPi * x), sy = std::sin(kPi * y);
    const double s2x = std::sin(2.0 * kPi * x), s2y = std::sin(2.0 * kPi * y);
    const double c2x = std::cos(2.0 * kPi * x), c2y = std::cos(2.0 * kPi * y);
    out[0] = kPi * kPi * s2x * s2y;
    out[1] = 2.0 * kPi * kPi * sx * sx * c2y;
    out[2] = -2.0 * kPi * kPi * c2x * sy * sy;
    out[3] = -kPi * kPi * s2x * s2y;
  };
  ms.pressure = [](double x, double y) { return std::cos(kPi * x) * std::cos(kPi * y); };
  ms.source = [](double x, double y, double out[2]) { stokes_neg_lap_plus_gradp(x, y, out); };
  return ms;
}

inline ExampleDef example_by_id(int id) {
  switch (id) {
    case 1: return example1();
    case 2: return example2();
    case 3: return example3();
    default: throw std::invalid_argument("example_by_id: unknown example " + std::to_string(id));
  }
}

} // namespace stokesoc
