#pragma once

// Central finite-difference oracle shared by the gradient tests. Independent of any
// backward implementation: it only evaluates a scalar function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace fd {

inline double central(const std::function<double()>& f, double& coord, double h = 1e-5) {
  const double saved = coord;
  coord = saved + h;
  const double up = f();
  coord = saved - h;
  const double down = f();
  coord = saved;
  return (up - down) / (2.0 * h);
}

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dominating.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Max relative error over the given coordinates of a flat buffer.
inline double max_rel_error(double* values, const std::vector<double>& analytic, const std::vector<std::size_t>& coords,
                     const std::function<double()>& f, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i : coords) worst = std::max(worst, rel_error(analytic[i], central(f, values[i], h)));
  return worst;
}

}  // namespace fd
