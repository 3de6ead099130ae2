#include "adawac/analysis.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace adawac::analysis {
namespace {

using nlohmann::json;

}  // namespace

MaxOverBetaResult max_over_beta(const opt::WacProblem& problem, const Vector& theta) {
  const auto [ce, ac] = opt::per_sample_losses(problem, theta);
  MaxOverBetaResult result;
  result.vertex_beta.resize(ce.size());
  Scalar acc = 0.0;
  for (Index i = 0; i < ce.size(); ++i) {
    acc += std::max(ce(i), ac(i));
    result.vertex_beta(i) = ce(i) >= ac(i) ? 1.0 : 0.0;
  }
  result.value = acc / static_cast<Scalar>(ce.size());
  return result;
}

OracleResult min_over_theta(const opt::WacProblem& problem, const Vector& beta_bar,
                            const OracleConfig& oracle) {
  if (problem.model.spec.family != model::Family::kConvexLinear) {
    throw DimensionError(
        "min_over_theta: the inner oracle requires the convex_linear family; "
        "its upper-bound certificate relies on convexity");
  }
  const Index dim = model::param_dim(problem.model.spec);
  Vector theta;
  if (oracle.theta_init.size() > 0) {
    theta = oracle.theta_init;
  } else if (oracle.projection) {
    theta = oracle.projection->center;
  } else {
    theta = Vector::Zero(dim);
  }
  if (theta.size() != dim) throw DimensionError("min_over_theta: bad theta_init size");
  if (oracle.projection) {
    opt::project_ball(theta, oracle.projection->center, oracle.projection->gamma);
  }

  auto objective = [&](const Vector& t) { return opt::wac_objective(problem, t, beta_bar); };

  Scalar value = objective(theta);
  Scalar step = 1.0;
  Scalar mapping_norm = 0.0;
  int it = 0;
  for (; it < oracle.max_iters; ++it) {
    Vector grad = opt::wac_objective_grad(problem, theta, beta_bar);
    // Backtracking line search on the projected step with the standard
    // sufficient-decrease condition f(t+) <= f(t) - (1/(2s)) |t+ - t|^2.
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      Vector trial = theta - step * grad;
      if (oracle.projection) {
        opt::project_ball(trial, oracle.projection->center, oracle.projection->gamma);
      }
      const Vector diff = trial - theta;
      const Scalar trial_value = objective(trial);
      if (trial_value <= value - 0.5 / step * diff.squaredNorm()) {
        mapping_norm = diff.norm() / step;
        theta = std::move(trial);
        value = trial_value;
        step *= 1.5;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      mapping_norm = grad.norm();
      break;
    }
    if (mapping_norm < oracle.grad_tol) {
      ++it;
      break;
    }
  }

  OracleResult result;
  result.value = value;
  result.theta = std::move(theta);
  result.iterations = it;
  result.grad_norm = mapping_norm;
  // For a convex objective over a ball of radius gamma around the center,
  // value - min <= |gradient mapping| * diameter. Without a projection the
  // domain is unbounded, so fall back to a unit-scale diameter proxy.
  const Scalar diameter =
      oracle.projection ? 2.0 * oracle.projection->gamma : 1.0 + result.theta.norm();
  result.suboptimality = mapping_norm * diameter;
  return result;
}

GapReport duality_gap(const opt::WacProblem& problem, const Vector& theta_bar,
                      const Vector& beta_bar, const OracleConfig& oracle) {
  const MaxOverBetaResult upper = max_over_beta(problem, theta_bar);
  const OracleResult lower = min_over_theta(problem, beta_bar, oracle);
  GapReport report;
  report.max_over_beta_value = upper.value;
  report.min_over_theta_value = lower.value;
  report.gap = upper.value - lower.value;
  report.oracle_tolerance = lower.suboptimality;
  report.oracle_iterations = lower.iterations;
  return report;
}

ConstantEstimates estimate_constants(const opt::WacProblem& problem,
                                     const std::vector<Vector>& probe_thetas) {
  if (probe_thetas.empty()) throw DimensionError("estimate_constants: empty probe set");
  ConstantEstimates est;
  est.probes = static_cast<int>(probe_thetas.size());
  const Index n = static_cast<Index>(problem.data.size());
  Vector g_ce, g_ac;
  for (const Vector& theta : probe_thetas) {
    Scalar grad_sq = 0.0;
    Scalar loss_sq = 0.0;
    for (Index i = 0; i < n; ++i) {
      const auto& sample = problem.data[static_cast<std::size_t>(i)];
      const auto& [a1, a2] = problem.pairs[static_cast<std::size_t>(i)];
      const Scalar ce = model::ce_value_grad(problem.model, theta, sample, g_ce);
      const Scalar ac = model::ac_value_grad(problem.model, theta, sample.x, a1, a2,
                                             problem.lambda_ac, problem.metric, g_ac);
      // sup over B rows of |b ce' + (1-b) ac'|^2 sits at an endpoint.
      grad_sq += std::max(g_ce.squaredNorm(), g_ac.squaredNorm());
      const Scalar worst = std::max(ce, ac);
      loss_sq += worst * worst;
    }
    est.c_theta_star = std::max(est.c_theta_star, std::sqrt(grad_sq / static_cast<Scalar>(n)));
    est.c_b_star = std::max(est.c_b_star, std::sqrt(loss_sq / static_cast<Scalar>(n)));
  }
  return est;
}

std::vector<Vector> make_probe_set(const Vector& center, Scalar gamma,
                                   const std::vector<Vector>& trajectory, int num_ball,
                                   std::uint64_t seed) {
  std::vector<Vector> probes;
  probes.push_back(center);
  for (const Vector& t : trajectory) probes.push_back(t);
  Rng rng(seed);
  for (int i = 0; i < num_ball; ++i) {
    Vector direction(center.size());
    for (Index j = 0; j < direction.size(); ++j) direction(j) = normal01(rng);
    const Scalar radius = gamma * std::pow(uniform01(rng), 1.0 / 3.0);
    probes.push_back(center + direction * (radius / direction.norm()));
  }
  return probes;
}

Scalar theoretical_bound(Scalar gamma, const ConstantEstimates& consts, Index n,
                         long long iterations) {
  if (iterations < 1) throw DimensionError("theoretical_bound: T must be >= 1");
  if (n < 1) throw DimensionError("theoretical_bound: n must be >= 1");
  const Scalar bracket = gamma * gamma * consts.c_theta_star * consts.c_theta_star +
                         2.0 * static_cast<Scalar>(n) * consts.c_b_star * consts.c_b_star;
  return 2.0 * std::sqrt(5.0 * bracket / static_cast<Scalar>(iterations));
}

SeparationReport separation_report(const Vector& beta, const std::vector<SubpopTag>& tags) {
  if (static_cast<std::size_t>(beta.size()) != tags.size()) {
    throw DimensionError("separation_report: beta length != tag count");
  }
  SeparationReport report;
  for (Index i = 0; i < beta.size(); ++i) {
    const bool predicted_dense = beta(i) > 0.5;  // ties classify as sparse
    const bool is_dense = tags[static_cast<std::size_t>(i)] == SubpopTag::kDense;
    if (is_dense && predicted_dense) ++report.dense_as_dense;
    if (is_dense && !predicted_dense) ++report.dense_as_sparse;
    if (!is_dense && !predicted_dense) ++report.sparse_as_sparse;
    if (!is_dense && predicted_dense) ++report.sparse_as_dense;
    report.mean_margin += std::abs(beta(i) - 0.5);
  }
  const Scalar n = static_cast<Scalar>(beta.size());
  report.accuracy = (report.dense_as_dense + report.sparse_as_sparse) / n;
  report.mean_margin /= n;
  return report;
}

Scalar rate_fit(const std::vector<std::pair<long long, Scalar>>& points) {
  if (points.size() < 3) throw DimensionError("rate_fit: need at least 3 points");
  Scalar sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& [t, gap] : points) {
    if (t < 1 || !(gap > 0.0)) throw DimensionError("rate_fit: need T >= 1 and positive gaps");
    const Scalar x = std::log(static_cast<Scalar>(t));
    const Scalar y = std::log(gap);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const Scalar n = static_cast<Scalar>(points.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::string to_json(const GapReport& report) {
  json doc;
  doc["max_over_beta_value"] = report.max_over_beta_value;
  doc["min_over_theta_value"] = report.min_over_theta_value;
  doc["gap"] = report.gap;
  doc["oracle_tolerance"] = report.oracle_tolerance;
  doc["oracle_iterations"] = report.oracle_iterations;
  return doc.dump();
}

std::string to_json(const ConstantEstimates& estimates) {
  json doc;
  doc["c_theta_star"] = estimates.c_theta_star;
  doc["c_b_star"] = estimates.c_b_star;
  doc["probes"] = estimates.probes;
  return doc.dump();
}

}  // namespace adawac::analysis
