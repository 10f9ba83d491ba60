#pragma once

// Quasi-Newton minimization with a strong-Wolfe line search.
//
// Three update rules share the same driver: limited-memory BFGS (default),
// dense BFGS for small problems, and plain fixed-step gradient descent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "crfnet/error.hpp"
#include "crfnet/matrix.hpp"

namespace crfnet {

enum class OptimMethod { lbfgs, bfgs, gradient_descent };

struct OptimConfig {
  std::size_t max_iterations = 500;
  double gradient_tolerance = 1e-5;  // on the sup-norm of the gradient
  std::size_t lbfgs_memory = 10;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  std::size_t max_line_search_steps = 40;
  OptimMethod method = OptimMethod::lbfgs;
  double descent_step = 1e-2;  // only used by gradient_descent
  std::size_t dense_bfgs_limit = 5000;

  void validate() const {
    require(gradient_tolerance > 0.0, ErrorCode::invalid_argument,
            "gradient_tolerance must be positive");
    require(lbfgs_memory >= 1, ErrorCode::invalid_argument, "lbfgs_memory must be >= 1");
    require(wolfe_c1 > 0.0 && wolfe_c1 < 1.0, ErrorCode::invalid_argument,
            "wolfe_c1 must lie in (0, 1)");
    require(wolfe_c2 > wolfe_c1 && wolfe_c2 < 1.0, ErrorCode::invalid_argument,
            "wolfe_c2 must lie in (wolfe_c1, 1)");
    require(max_line_search_steps >= 1, ErrorCode::invalid_argument,
            "max_line_search_steps must be >= 1");
    require(descent_step > 0.0, ErrorCode::invalid_argument, "descent_step must be positive");
  }
};

/// One accepted line-search step, recorded so callers can audit the Wolfe
/// conditions: phi(0), phi'(0), the step, phi(step), phi'(step).
struct LineSearchRecord {
  double step = 0.0;
  double value_before = 0.0;
  double slope_before = 0.0;
  double value_after = 0.0;
  double slope_after = 0.0;
};

struct OptimReport {
  std::size_t iterations_used = 0;
  double final_objective = 0.0;
  double final_gradient_norm = 0.0;
  std::vector<double> objective_trace;  // value at init, then after each step
  std::vector<LineSearchRecord> steps;
  bool converged = false;
  std::string diagnostic;
};

struct Evaluation {
  double value = 0.0;
  std::vector<double> gradient;
};

struct OptimResult {
  std::vector<double> solution;
  OptimReport report;
};

namespace detail {

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

template <typename Objective>
Evaluation evaluate_checked(Objective& f, std::span<const double> x, std::size_t iterate,
                            double step) {
  Evaluation e = f(x);
  bool finite = std::isfinite(e.value);
  for (double g : e.gradient) finite = finite && std::isfinite(g);
  if (!finite) {
    fail(ErrorCode::non_finite, "objective or gradient is not finite at iterate " +
                                    std::to_string(iterate) +
                                    " (trial step " + std::to_string(step) + ")");
  }
  require(e.gradient.size() == x.size(), ErrorCode::dimension_mismatch,
          "gradient length does not match the parameter vector");
  return e;
}

// Minimizer of the cubic matching values and slopes at a and b; falls back to
// bisection when the cubic has no real minimizer.
inline double cubic_minimizer(double a, double fa, double ga, double b, double fb, double gb) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  if (disc < 0.0) return 0.5 * (a + b);
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  const double denom = gb - ga + 2.0 * d2;
  if (denom == 0.0) return 0.5 * (a + b);
  const double t = b - (b - a) * (gb + d2 - d1) / denom;
  return std::isfinite(t) ? t : 0.5 * (a + b);
}

struct TrialPoint {
  double step = 0.0;
  double value = 0.0;
  double slope = 0.0;
  std::vector<double> x;
  std::vector<double> gradient;
};

struct LineSearchOutcome {
  bool success = false;
  TrialPoint point;
};

// Strong-Wolfe search: bracketing phase followed by zoom with safeguarded
// cubic interpolation.
template <typename Objective>
LineSearchOutcome strong_wolfe_search(Objective& f, std::span<const double> x,
                                      double value0, std::span<const double> grad0,
                                      std::span<const double> direction, double initial_step,
                                      const OptimConfig& cfg, std::size_t iterate) {
  const double slope0 = dot(grad0, direction);
  std::size_t evaluations = 0;

  auto probe = [&](double step) {
    TrialPoint p;
    p.step = step;
    p.x.assign(x.begin(), x.end());
    axpy(step, direction, p.x);
    Evaluation e = evaluate_checked(f, p.x, iterate, step);
    p.value = e.value;
    p.gradient = std::move(e.gradient);
    p.slope = dot(p.gradient, direction);
    ++evaluations;
    return p;
  };
  auto sufficient = [&](const TrialPoint& p) {
    return p.value <= value0 + cfg.wolfe_c1 * p.step * slope0;
  };
  auto curvature = [&](const TrialPoint& p) {
    return std::abs(p.slope) <= -cfg.wolfe_c2 * slope0;
  };

  auto zoom = [&](TrialPoint lo, TrialPoint hi) -> LineSearchOutcome {
    while (evaluations < cfg.max_line_search_steps) {
      const double left = std::min(lo.step, hi.step);
      const double right = std::max(lo.step, hi.step);
      const double width = right - left;
      if (width <= std::numeric_limits<double>::epsilon() * std::max(1.0, right)) break;
      double step = cubic_minimizer(lo.step, lo.value, lo.slope, hi.step, hi.value, hi.slope);
      step = std::clamp(step, left + 0.1 * width, right - 0.1 * width);
      TrialPoint p = probe(step);
      if (!sufficient(p) || p.value >= lo.value) {
        hi = std::move(p);
        continue;
      }
      if (curvature(p)) return {true, std::move(p)};
      if (p.slope * (hi.step - lo.step) >= 0.0) hi = lo;
      lo = std::move(p);
    }
    return {false, std::move(lo)};
  };

  TrialPoint previous;
  previous.step = 0.0;
  previous.value = value0;
  previous.slope = slope0;
  previous.x.assign(x.begin(), x.end());
  previous.gradient.assign(grad0.begin(), grad0.end());

  double step = initial_step;
  while (evaluations < cfg.max_line_search_steps) {
    TrialPoint p = probe(step);
    if (!sufficient(p) || (evaluations > 1 && p.value >= previous.value)) {
      return zoom(std::move(previous), std::move(p));
    }
    if (curvature(p)) return {true, std::move(p)};
    if (p.slope >= 0.0) return zoom(std::move(p), std::move(previous));
    previous = std::move(p);
    step *= 2.0;
  }
  return {false, std::move(previous)};
}

}  // namespace detail

/// Minimizes f starting from init. `f` maps a parameter vector
/// (std::span<const double>) to an Evaluation.
template <typename Objective>
OptimResult lbfgs_minimize(Objective&& f, std::vector<double> init, const OptimConfig& cfg) {
  cfg.validate();
  const std::size_t n = init.size();
  if (cfg.method == OptimMethod::bfgs) {
    require(n <= cfg.dense_bfgs_limit, ErrorCode::invalid_argument,
            "dense BFGS requested for " + std::to_string(n) + " parameters (limit " +
                std::to_string(cfg.dense_bfgs_limit) + ")");
  }

  OptimResult result;
  auto& report = result.report;
  std::vector<double> x = std::move(init);
  Evaluation current = detail::evaluate_checked(f, x, 0, 0.0);
  report.objective_trace.push_back(current.value);

  std::deque<std::pair<std::vector<double>, std::vector<double>>> memory;  // (s, y)
  Matrix inverse_hessian;  // dense mode only
  bool have_curvature = false;

  std::size_t iteration = 0;
  for (;; ++iteration) {
    const double gnorm = sup_norm(current.gradient);
    if (gnorm <= cfg.gradient_tolerance) {
      report.converged = true;
      break;
    }
    if (iteration >= cfg.max_iterations) {
      report.diagnostic = "iteration limit reached";
      break;
    }

    std::vector<double> direction(n);
    if (cfg.method == OptimMethod::gradient_descent) {
      for (std::size_t i = 0; i < n; ++i) direction[i] = -current.gradient[i];
      std::vector<double> next = x;
      detail::axpy(cfg.descent_step, direction, next);
      Evaluation e = detail::evaluate_checked(f, next, iteration + 1, cfg.descent_step);
      report.steps.push_back({cfg.descent_step, current.value, dot(current.gradient, direction),
                              e.value, dot(e.gradient, direction)});
      x = std::move(next);
      current = std::move(e);
      report.objective_trace.push_back(current.value);
      continue;
    }

    if (cfg.method == OptimMethod::bfgs && have_curvature) {
      for (std::size_t i = 0; i < n; ++i) {
        direction[i] = -dot(inverse_hessian.row(i), current.gradient);
      }
    } else {
      // Two-loop recursion; with no memory this is steepest descent.
      std::vector<double> q = current.gradient;
      std::vector<double> alphas(memory.size());
      for (std::size_t j = memory.size(); j-- > 0;) {
        const auto& [s, y] = memory[j];
        alphas[j] = dot(s, q) / dot(y, s);
        detail::axpy(-alphas[j], y, q);
      }
      if (!memory.empty()) {
        const auto& [s, y] = memory.back();
        const double gamma = dot(s, y) / dot(y, y);
        for (double& v : q) v *= gamma;
      }
      for (std::size_t j = 0; j < memory.size(); ++j) {
        const auto& [s, y] = memory[j];
        const double beta = dot(y, q) / dot(y, s);
        detail::axpy(alphas[j] - beta, s, q);
      }
      for (std::size_t i = 0; i < n; ++i) direction[i] = -q[i];
    }

    if (dot(direction, current.gradient) >= 0.0) {
      // Not a descent direction: drop curvature information and restart.
      memory.clear();
      have_curvature = false;
      for (std::size_t i = 0; i < n; ++i) direction[i] = -current.gradient[i];
    }

    const bool first_step = memory.empty() && !have_curvature;
    const double initial_step =
        first_step ? std::min(1.0, 1.0 / std::sqrt(squared_norm(current.gradient))) : 1.0;
    auto outcome = detail::strong_wolfe_search(f, x, current.value, current.gradient,
                                               direction, initial_step, cfg, iteration + 1);
    if (!outcome.success) {
      report.diagnostic = "line search failed to satisfy the strong Wolfe conditions within " +
                          std::to_string(cfg.max_line_search_steps) +
                          " evaluations at iteration " + std::to_string(iteration + 1);
      break;
    }

    auto& p = outcome.point;
    report.steps.push_back(
        {p.step, current.value, dot(current.gradient, direction), p.value, p.slope});
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = p.x[i] - x[i];
      y[i] = p.gradient[i] - current.gradient[i];
    }
    const double sy = dot(s, y);
    if (sy > std::numeric_limits<double>::epsilon() * std::sqrt(squared_norm(s) * squared_norm(y))) {
      if (cfg.method == OptimMethod::bfgs) {
        if (!have_curvature) {
          const double gamma = sy / dot(y, y);
          inverse_hessian = Matrix(n, n);
          for (std::size_t i = 0; i < n; ++i) inverse_hessian(i, i) = gamma;
          have_curvature = true;
        }
        // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
        const double rho = 1.0 / sy;
        std::vector<double> hy(n);
        for (std::size_t i = 0; i < n; ++i) hy[i] = dot(inverse_hessian.row(i), y);
        const double yhy = dot(y, hy);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            inverse_hessian(i, j) += -rho * (s[i] * hy[j] + hy[i] * s[j]) +
                                     (rho * rho * yhy + rho) * s[i] * s[j];
          }
        }
      } else {
        memory.emplace_back(std::move(s), std::move(y));
        if (memory.size() > cfg.lbfgs_memory) memory.pop_front();
      }
    }

    x = std::move(p.x);
    current.value = p.value;
    current.gradient = std::move(p.gradient);
    report.objective_trace.push_back(current.value);
  }

  report.iterations_used = iteration;
  report.final_objective = current.value;
  report.final_gradient_norm = sup_norm(current.gradient);
  result.solution = std::move(x);
  return result;
}

}  // namespace crfnet
