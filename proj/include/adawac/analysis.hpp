// Verification instruments: duality-gap evaluation with an inner-minimization
// oracle, theoretical-bound computation, empirical constant estimation,
// separation statistics, and convergence-rate fitting.
#pragma once

#include <vector>

#include "adawac/optimizer.hpp"
#include "adawac/types.hpp"

namespace adawac::analysis {

struct MaxOverBetaResult {
  Scalar value = 0.0;     // (1/n) sum_i max(ce_i, ac_i)
  Vector vertex_beta;     // 1 iff ce_i >= ac_i (ties go to 1)
};

/// Exact maximization of the weighted objective over beta in [0,1]^n at a
/// fixed theta; attained on a vertex.
MaxOverBetaResult max_over_beta(const opt::WacProblem& problem, const Vector& theta);

struct OracleConfig {
  int max_iters = 2000;
  Scalar grad_tol = 1e-6;  // projected-gradient-mapping norm target
  std::optional<opt::Projection> projection;
  Vector theta_init;  // empty = projection center or zeros
};

struct OracleResult {
  Scalar value = 0.0;
  Vector theta;
  int iterations = 0;
  Scalar grad_norm = 0.0;      // gradient-mapping norm at exit
  Scalar suboptimality = 0.0;  // certified bound on value - min
};

/// Full-batch projected gradient descent with backtracking line search on the
/// beta-weighted objective; convex_linear family only (the upper-bound
/// certificate relies on convexity). Returns an upper bound on the true
/// minimum with a reported suboptimality estimate.
OracleResult min_over_theta(const opt::WacProblem& problem, const Vector& beta_bar,
                            const OracleConfig& oracle);

struct GapReport {
  Scalar max_over_beta_value = 0.0;
  Scalar min_over_theta_value = 0.0;
  Scalar gap = 0.0;
  Scalar oracle_tolerance = 0.0;
  int oracle_iterations = 0;
};

GapReport duality_gap(const opt::WacProblem& problem, const Vector& theta_bar,
                      const Vector& beta_bar, const OracleConfig& oracle);

struct ConstantEstimates {
  Scalar c_theta_star = 0.0;  // max over probes of sqrt((1/n) sum_i sup_B |grad L_i|^2)
  Scalar c_b_star = 0.0;      // max over probes of sqrt((1/n) sum_i max(ce,ac)^2)
  int probes = 0;
};

/// Suprema of the two bound constants over a probe set of parameter vectors;
/// empirical lower bounds on the true suprema over the feasible ball. The
/// per-sample gradient bound takes the worse endpoint weight (beta_i in
/// {0,1}), which dominates every interior weight.
ConstantEstimates estimate_constants(const opt::WacProblem& problem,
                                     const std::vector<Vector>& probe_thetas);

/// Convenience probe set: center, trajectory points, and `num_ball` uniform
/// samples from the gamma-ball around center.
std::vector<Vector> make_probe_set(const Vector& center, Scalar gamma,
                                   const std::vector<Vector>& trajectory, int num_ball,
                                   std::uint64_t seed);

/// Duality-gap bound 2 sqrt(5 (gamma^2 c_theta^2 + 2 n c_b^2) / T).
Scalar theoretical_bound(Scalar gamma, const ConstantEstimates& consts, Index n,
                         long long iterations);

struct SeparationReport {
  Scalar accuracy = 0.0;     // fraction where (beta_i > 1/2) == (tag == dense)
  Scalar mean_margin = 0.0;  // mean |beta_i - 1/2|
  int dense_as_dense = 0;
  int dense_as_sparse = 0;
  int sparse_as_sparse = 0;
  int sparse_as_dense = 0;
};

SeparationReport separation_report(const Vector& beta, const std::vector<SubpopTag>& tags);

/// Least-squares slope of log(gap) against log(T); all gaps must be positive.
Scalar rate_fit(const std::vector<std::pair<long long, Scalar>>& points);

std::string to_json(const GapReport& report);
std::string to_json(const ConstantEstimates& estimates);

}  // namespace adawac::analysis
