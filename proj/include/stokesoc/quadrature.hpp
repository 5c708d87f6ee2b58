#pragma once

// Symmetric Gauss rules on the reference triangle and Gauss-Legendre rules
// in time, plus slab integration with breakpoint splitting.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace stokesoc {

struct QuadraturePoint {
  double lambda[3]; // barycentric coordinates
  double weight;    // reference-triangle weight (weights sum to 1/2)
};

struct QuadratureRule {
  int degree = 0;
  std::vector<QuadraturePoint> points;
};

namespace detail {

inline void push_orbit3(std::vector<QuadraturePoint>& pts, double w, double a) {
  const double b = 1.0 - 2.0 * a;
  pts.push_back({{b, a, a}, w});
  pts.push_back({{a, b, a}, w});
  pts.push_back({{a, a, b}, w});
}

inline void push_orbit6(std::vector<QuadraturePoint>& pts, double w, double a, double b) {
  const double c = 1.0 - a - b;
  pts.push_back({{a, b, c}, w});
  pts.push_back({{a, c, b}, w});
  pts.push_back({{b, a, c}, w});
  pts.push_back({{b, c, a}, w});
  pts.push_back({{c, a, b}, w});
  pts.push_back({{c, b, a}, w});
}

} // namespace detail

// Dunavant rules, weights rescaled to integrate over the reference triangle
// of area 1/2. Supported exactness degrees: 2, 4, 6, 8.
inline QuadratureRule quadrature_rule(int degree) {
  QuadratureRule rule;
  rule.degree = degree;
  auto& p = rule.points;
  switch (degree) {
    case 2:
      detail::push_orbit3(p, 1.0 / 3.0, 1.0 / 6.0);
      break;
    case 4:
      detail::push_orbit3(p, 0.223381589678011, 0.445948490915965);
      detail::push_orbit3(p, 0.109951743655322, 0.091576213509771);
      break;
    case 6:
      detail::push_orbit3(p, 0.116786275726379, 0.249286745170910);
      detail::push_orbit3(p, 0.050844906370207, 0.063089014491502);
      detail::push_orbit6(p, 0.082851075618374, 0.310352451033784, 0.636502499121399);
      break;
    case 8:
      p.push_back({{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, 0.144315607677787});
      detail::push_orbit3(p, 0.095091634413923, 0.459292588292723);
      detail::push_orbit3(p, 0.103217370534718, 0.170569307751760);
      detail::push_orbit3(p, 0.032458497623198, 0.050547228317031);
      detail::push_orbit6(p, 0.027230314174435, 0.263112829634638, 0.728492392955404);
      break;
    default:
      throw std::invalid_argument("quadrature_rule: unsupported degree " + std::to_string(degree));
  }
  for (auto& q : p) q.weight *= 0.5;
  return rule;
}

struct GaussPoint1D {
  double t;
  double w;
};

// Gauss-Legendre rule on [0,1].
inline std::vector<GaussPoint1D> gauss_legendre_01(int n_points) {
  switch (n_points) {
    case 1:
      return {{0.5, 1.0}};
    case 2: {
      const double d = 0.5 / std::sqrt(3.0);
      return {{0.5 - d, 0.5}, {0.5 + d, 0.5}};
    }
    case 3: {
      const double d = 0.5 * std::sqrt(3.0 / 5.0);
      return {{0.5 - d, 5.0 / 18.0}, {0.5, 8.0 / 18.0}, {0.5 + d, 5.0 / 18.0}};
    }
    case 5: {
      const double a = 0.5 * 0.906179845938664;
      const double b = 0.5 * 0.538469310105683;
      const double wa = 0.5 * 0.236926885056189;
      const double wb = 0.5 * 0.478628670499366;
      const double wc = 0.5 * 0.568888888888889;
      return {{0.5 - a, wa}, {0.5 - b, wb}, {0.5, wc}, {0.5 + b, wb}, {0.5 + a, wa}};
    }
    default:
      throw std::invalid_argument("gauss_legendre_01: unsupported point count");
  }
}

// Integrates f over (t0, t1) with a Gauss rule applied piecewise between the
// breakpoints that fall strictly inside the interval. Data with kinks or
// jumps (piecewise-defined time profiles) stays exactly integrable this way.
inline double integrate_time(const std::function<double(double)>& f, double t0, double t1,
                             const std::vector<double>& breakpoints, int gauss_points = 3) {
  const auto rule = gauss_legendre_01(gauss_points);
  std::vector<double> knots;
  knots.push_back(t0);
  for (double b : breakpoints)
    if (b > t0 + 1e-14 && b < t1 - 1e-14) knots.push_back(b);
  knots.push_back(t1);
  std::sort(knots.begin(), knots.end());
  double total = 0.0;
  for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
    const double a = knots[s], b = knots[s + 1];
    const double len = b - a;
    if (len <= 0.0) continue;
    for (const auto& gp : rule) total += len * gp.w * f(a + len * gp.t);
  }
  return total;
}

// Sub-interval decomposition of (t0,t1) at the given interior breakpoints,
// with Gauss points per piece; used where the integrand is vector valued.
inline std::vector<GaussPoint1D> time_points(double t0, double t1,
                                             const std::vector<double>& breakpoints,
                                             int gauss_points = 3) {
  const auto rule = gauss_legendre_01(gauss_points);
  std::vector<double> knots;
  knots.push_back(t0);
  for (double b : breakpoints)
    if (b > t0 + 1e-14 && b < t1 - 1e-14) knots.push_back(b);
  knots.push_back(t1);
  std::sort(knots.begin(), knots.end());
  std::vector<GaussPoint1D> out;
  for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
    const double a = knots[s], b = knots[s + 1];
    const double len = b - a;
    if (len <= 0.0) continue;
    for (const auto& gp : rule) out.push_back({a + len * gp.t, len * gp.w});
  }
  return out;
}

} // namespace stokesoc
