#pragma once

// dG(0) time grids and per-slab coefficient trajectories.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace stokesoc {

struct TimeGrid {
  double T = 1.0;
  int M = 0;
  std::vector<double> nodes; // t_0 = 0 ... t_M = T
  bool is_uniform = true;

  static TimeGrid uniform(double T, int M) {
    if (M < 1 || !(T > 0.0)) throw std::invalid_argument("TimeGrid::uniform: need M >= 1, T > 0");
    TimeGrid g;
    g.T = T;
    g.M = M;
    g.nodes.resize(M + 1);
    for (int m = 0; m <= M; ++m) g.nodes[m] = static_cast<double>(m) * T / M;
    g.is_uniform = true;
    return g;
  }

  // slab index m in [0, M): I_m = (nodes[m], nodes[m+1]]
  double k(int m) const { return nodes[m + 1] - nodes[m]; }
  double k_max() const {
    double km = 0.0;
    for (int m = 0; m < M; ++m) km = std::max(km, k(m));
    return km;
  }
  double midpoint(int m) const { return 0.5 * (nodes[m] + nodes[m + 1]); }
  double log_factor() const { return std::log(T / k_max()); } // ln(T/k)
};

// Piecewise-constant-in-time coefficient trajectory: one block per slab.
struct SpaceTimeField {
  enum class Kind { velocity, pressure, control };

  TimeGrid grid;
  Kind kind = Kind::velocity;
  int block_size = 0;
  std::vector<double> data; // grid.M blocks, contiguous

  SpaceTimeField() = default;
  SpaceTimeField(TimeGrid g, Kind kd, int block)
      : grid(std::move(g)), kind(kd), block_size(block),
        data(static_cast<std::size_t>(grid.M) * block, 0.0) {}

  double* block(int m) { return data.data() + static_cast<std::size_t>(m) * block_size; }
  const double* block(int m) const { return data.data() + static_cast<std::size_t>(m) * block_size; }

  // slab index containing time t (t in (0, T]; t = 0 maps to the first slab)
  int slab_of(double t) const {
    int lo = 0, hi = grid.M - 1;
    while (lo < hi) {
      const int mid = (lo + hi) / 2;
      if (t <= grid.nodes[mid + 1]) hi = mid;
      else lo = mid + 1;
    }
    return lo;
  }
};

} // namespace stokesoc
