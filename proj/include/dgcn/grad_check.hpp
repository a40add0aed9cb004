#pragma once

// Central finite-difference check of analytic gradients. `fn` must map a flat
// parameter vector to (scalar loss, gradient of the same length); it is called
// once for the analytic gradient and twice per coordinate for the numeric one.

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace dgcn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline GradCheckResult grad_check(
    const std::function<std::pair<double, std::vector<double>>(const std::vector<double>&)>& fn,
    std::vector<double> point, double eps = 1e-5) {
  GradCheckResult res;
  const std::vector<double> analytic = fn(point).second;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double keep = point[i];
    point[i] = keep + eps;
    const double up = fn(point).first;
    point[i] = keep - eps;
    const double down = fn(point).first;
    point[i] = keep;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
      res.analytic = analytic[i];
      res.numeric = numeric;
    }
  }
  return res;
}

}  // namespace dgcn
