#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <set>
#include <tuple>

#include "parscale/common/errors.hpp"
#include "parscale/common/parallel.hpp"
#include "parscale/law/law.hpp"

namespace parscale {
namespace {

using Vec = std::array<double, 4>;  // log A, log E, log alpha, log k | logit rho

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) s += a[i] * b[i];
  return s;
}

double inf_norm(const Vec& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

LawParams unpack(const Vec& t, LawFamily family) {
  LawParams p;
  p.family = family;
  p.A = std::exp(t[0]);
  p.E = std::exp(t[1]);
  p.alpha = std::exp(t[2]);
  if (family == LawFamily::logarithmic) {
    p.k = std::exp(t[3]);
  } else {
    p.rho = logistic(t[3]);
  }
  return p;
}

Vec pack(const LawParams& p) {
  // A zero alpha on the grid has no log; start just above it.
  const double alpha = std::max(p.alpha, 1e-3);
  Vec t{std::log(p.A), std::log(p.E), std::log(alpha), 0.0};
  t[3] = p.family == LawFamily::logarithmic ? std::log(p.k) : std::log(p.rho / (1.0 - p.rho));
  return t;
}

struct Problem {
  std::vector<double> log_n, log_p, p, log_loss;
  LawFamily family;
  double delta;

  // The power term is formed in log space; overflow yields +inf, which the
  // line search treats as a rejected step.
  double operator()(const Vec& t) const {
    const double alpha = std::exp(t[2]);
    const double E = std::exp(t[1]);
    double sum = 0.0;
    for (std::size_t i = 0; i < log_n.size(); ++i) {
      double term;
      if (family == LawFamily::logarithmic) {
        const double k = std::exp(t[3]);
        term = std::exp(alpha * (t[0] - log_n[i] - std::log1p(k * log_p[i])));
      } else {
        const double rho = logistic(t[3]);
        term = std::exp(alpha * (t[0] - log_n[i])) * ((p[i] - 1.0) * rho + 1.0) / p[i];
      }
      const double r = std::log(term + E) - log_loss[i];
      sum += huber(r, delta);
    }
    return std::isfinite(sum) ? sum : std::numeric_limits<double>::infinity();
  }
};

Vec numeric_gradient(const Problem& f, const Vec& t) {
  Vec g{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(t[i]));
    Vec a = t, b = t;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

struct LocalMin {
  Vec theta{};
  double value = std::numeric_limits<double>::infinity();
  bool converged = false;
};

// Limited-memory BFGS with Armijo backtracking. Curvature pairs with
// non-positive s'y are dropped rather than damped.
LocalMin lbfgs(const Problem& f, Vec x, const FitOptions& opt) {
  constexpr std::size_t kMemory = 10;
  constexpr double kArmijo = 1e-4;
  std::deque<std::pair<Vec, Vec>> history;  // (s, y)

  LocalMin out;
  double fx = f(x);
  if (!std::isfinite(fx)) return out;
  Vec g = numeric_gradient(f, x);
  std::size_t stalls = 0;

  for (std::size_t iter = 0; iter < opt.max_iterations; ++iter) {
    if (inf_norm(g) <= opt.gradient_tolerance) {
      return {x, fx, true};
    }
    // Two-loop recursion.
    Vec q = g;
    std::vector<double> a(history.size());
    for (std::size_t j = history.size(); j-- > 0;) {
      const auto& [s, y] = history[j];
      a[j] = dot(s, q) / dot(y, s);
      for (std::size_t i = 0; i < 4; ++i) q[i] -= a[j] * y[i];
    }
    double gamma = 1.0;
    if (!history.empty()) {
      const auto& [s, y] = history.back();
      gamma = dot(s, y) / dot(y, y);
    } else {
      gamma = 1.0 / std::max(inf_norm(g), 1e-300);
      gamma = std::min(gamma, 1.0 / std::max(1.0, inf_norm(g)) * 1e3);
    }
    for (double& v : q) v *= gamma;
    for (std::size_t j = 0; j < history.size(); ++j) {
      const auto& [s, y] = history[j];
      const double b = dot(y, q) / dot(y, s);
      for (std::size_t i = 0; i < 4; ++i) q[i] += s[i] * (a[j] - b);
    }
    Vec dir;
    for (std::size_t i = 0; i < 4; ++i) dir[i] = -q[i];
    double slope = dot(g, dir);
    if (!(slope < 0.0)) {
      history.clear();
      for (std::size_t i = 0; i < 4; ++i) dir[i] = -g[i];
      slope = dot(g, dir);
    }
    // Keep any single trial move within a few units of log-space.
    const double cap = 4.0 / std::max(inf_norm(dir), 1e-300);
    double step = std::min(1.0, cap);
    Vec next{};
    double fn = fx;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < 4; ++i) next[i] = x[i] + step * dir[i];
      fn = f(next);
      if (std::isfinite(fn) && fn <= fx + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!history.empty()) {
        history.clear();
        continue;
      }
      // Steepest descent cannot improve either: a numerically flat minimum.
      return {x, fx, inf_norm(g) <= 1e3 * opt.gradient_tolerance};
    }
    const Vec gn = numeric_gradient(f, next);
    Vec s, y;
    for (std::size_t i = 0; i < 4; ++i) {
      s[i] = next[i] - x[i];
      y[i] = gn[i] - g[i];
    }
    if (dot(s, y) > 1e-300) {
      history.emplace_back(s, y);
      if (history.size() > kMemory) history.pop_front();
    }
    const double decrease = fx - fn;
    x = next;
    g = gn;
    fx = fn;
    // Relative progress below 1e-15 for several iterations in a row.
    stalls = decrease <= 1e-15 * std::max(fx, 1e-300) ? stalls + 1 : 0;
    if (stalls >= 5) return {x, fx, inf_norm(g) <= 1e3 * opt.gradient_tolerance};
  }
  out = {x, fx, false};
  return out;
}

std::tuple<double, double, double, double> sort_key(const LawParams& p) {
  return {p.A, p.E, p.alpha, p.family == LawFamily::logarithmic ? p.k : p.rho};
}

}  // namespace

LawFitResult fit_law(std::span<const LawObservation> observations, LawFamily family,
                     const FitOptions& options) {
  if (observations.size() < 5) {
    throw ContractError("fit_law needs at least 5 observations, got " +
                        std::to_string(observations.size()));
  }
  if (!(options.delta > 0.0)) throw ContractError("fit_law: huber delta must be positive");
  std::set<double> distinct_p;
  for (const auto& o : observations) {
    if (!(o.N > 0.0) || !(o.P >= 1.0) || !(o.loss > 0.0) || !std::isfinite(o.loss)) {
      throw InputError("fit_law: observations need N > 0, P >= 1 and loss > 0");
    }
    distinct_p.insert(o.P);
  }
  if (distinct_p.size() < 2) {
    throw IdentifiabilityError(
        std::string("fit_law: every observation has P = ") +
        std::to_string(static_cast<long long>(*distinct_p.begin())) + "; " +
        (family == LawFamily::logarithmic ? "k" : "rho") +
        " is not identifiable without at least two distinct P values");
  }

  // Canonical order so the objective, and hence the fit, does not depend on
  // how the observations were listed.
  std::vector<LawObservation> sorted(observations.begin(), observations.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a.N, a.P, a.loss) < std::tie(b.N, b.P, b.loss);
  });
  Problem problem{{}, {}, {}, {}, family, options.delta};
  for (const auto& o : sorted) {
    problem.log_n.push_back(std::log(o.N));
    problem.log_p.push_back(std::log(o.P));
    problem.p.push_back(o.P);
    problem.log_loss.push_back(std::log(o.loss));
  }

  const auto grid = initialization_grid(family);
  std::vector<LocalMin> results(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    results[i] = lbfgs(problem, pack(grid[i]), options);
  });

  const LocalMin* best = nullptr;
  const LocalMin* best_any = nullptr;
  std::size_t converged = 0;
  auto better = [&](const LocalMin& a, const LocalMin* b) {
    if (b == nullptr) return true;
    if (a.value != b->value) return a.value < b->value;
    return sort_key(unpack(a.theta, family)) < sort_key(unpack(b->theta, family));
  };
  for (const auto& r : results) {
    if (!std::isfinite(r.value)) continue;
    if (better(r, best_any)) best_any = &r;
    if (!r.converged) continue;
    ++converged;
    if (better(r, best)) best = &r;
  }
  if (best == nullptr) {
    std::string msg = "fit_law: no start converged out of " + std::to_string(grid.size());
    if (best_any != nullptr) {
      const auto p = unpack(best_any->theta, family);
      msg += "; best objective " + std::to_string(best_any->value) + " at A=" +
             std::to_string(p.A) + " E=" + std::to_string(p.E) +
             " alpha=" + std::to_string(p.alpha);
    }
    throw ConvergenceError(msg);
  }

  auto fit = evaluate_fit(unpack(best->theta, family), observations, options.delta);
  fit.starts = grid.size();
  fit.converged_starts = converged;
  return fit;
}

}  // namespace parscale
