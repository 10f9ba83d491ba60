#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace crfnet::check {

/// |a - n| / max(1, |a|, |n|): relative for large components, absolute for
/// small ones.
inline double gradient_error(double analytic, double numeric) {
  const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / scale;
}

struct GradientCheck {
  double max_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  bool passed(double tolerance) const { return max_error <= tolerance; }
};

/// Compares `analytic` against central differences of `value(x)`.
template <typename Value>
GradientCheck central_difference_check(Value&& value, std::vector<double> x,
                                       std::span<const double> analytic, double step = 1e-5) {
  GradientCheck out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double plus = value(std::span<const double>(x));
    x[i] = saved - step;
    const double minus = value(std::span<const double>(x));
    x[i] = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = gradient_error(analytic[i], numeric);
    ++out.checked;
    if (err > out.max_error || out.checked == 1) {
      out.max_error = err;
      out.worst_index = i;
      out.worst_analytic = analytic[i];
      out.worst_numeric = numeric;
    }
  }
  return out;
}

}  // namespace crfnet::check
