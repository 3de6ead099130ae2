// Scalar loss evaluations: averaged cross-entropy, augmentation-consistency
// penalty, dice loss, and the per-sample weighted objective value.
#pragma once

#include <Eigen/Core>

#include <cmath>

#include "adawac/types.hpp"
#include "adawac/util.hpp"

namespace adawac::losses {

/// Averaged cross-entropy of a d x K row-stochastic prediction against
/// per-pixel labels: -(1/d) sum_j log probs(j, y_j), probabilities clamped
/// at kProbClamp before the log.
template <typename DerivedP, typename DerivedY>
Scalar cross_entropy(const Eigen::MatrixBase<DerivedP>& probs,
                     const Eigen::MatrixBase<DerivedY>& y) {
  const Index d = probs.rows();
  const Index num_classes = probs.cols();
  if (y.size() != d) {
    throw DimensionError("cross_entropy: label length " + std::to_string(y.size()) +
                         " != pixel count " + std::to_string(d));
  }
  Scalar acc = 0.0;
  for (Index j = 0; j < d; ++j) {
    const int label = static_cast<int>(y(j));
    if (label < 0 || label >= num_classes) {
      throw DimensionError("cross_entropy: label " + std::to_string(label) +
                           " out of range [0, " + std::to_string(num_classes) + ") at pixel " +
                           std::to_string(j));
    }
    acc += std::log(std::max<Scalar>(probs(j, label), kProbClamp));
  }
  return -acc / static_cast<Scalar>(d);
}

/// Consistency penalty between two latent encodings:
/// lambda_ac * |z1 - z2|_2 or lambda_ac * |z1 - z2|_2^2.
template <typename DerivedA, typename DerivedB>
Scalar consistency(const Eigen::MatrixBase<DerivedA>& z1, const Eigen::MatrixBase<DerivedB>& z2,
                   Scalar lambda_ac, LatentMetric metric) {
  if (z1.size() != z2.size()) {
    throw DimensionError("consistency: latent lengths differ (" + std::to_string(z1.size()) +
                         " vs " + std::to_string(z2.size()) + ")");
  }
  if (lambda_ac < 0.0) throw DimensionError("consistency: lambda_ac must be >= 0");
  const Scalar sq = (z1 - z2).squaredNorm();
  return metric == LatentMetric::kSquaredEuclidean ? lambda_ac * sq : lambda_ac * std::sqrt(sq);
}

/// Smoothed dice coefficient for a soft prediction column p in [0,1]^d
/// against a binary indicator q: (2 p.q + eps) / (|p|_1 + |q|_1 + eps).
template <typename DerivedP, typename DerivedQ>
Scalar dice_coefficient(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q,
                        Scalar epsilon) {
  return (2.0 * p.dot(q) + epsilon) / (p.sum() + q.sum() + epsilon);
}

/// Dice loss 1 - (1/K) sum_k DSC_eps(probs[:,k], 1{y=k}). Accepts eps >= 0;
/// with eps = 0 a class absent from both prediction mass and labels would be
/// 0/0, so callers wanting gradients should keep eps > 0.
template <typename DerivedP, typename DerivedY>
Scalar dice_loss(const Eigen::MatrixBase<DerivedP>& probs, const Eigen::MatrixBase<DerivedY>& y,
                 Scalar epsilon) {
  const Index d = probs.rows();
  const Index num_classes = probs.cols();
  if (y.size() != d) throw DimensionError("dice_loss: label length != pixel count");
  Scalar acc = 0.0;
  for (Index k = 0; k < num_classes; ++k) {
    Vector indicator(d);
    for (Index j = 0; j < d; ++j) indicator(j) = (static_cast<Index>(y(j)) == k) ? 1.0 : 0.0;
    acc += dice_coefficient(probs.col(k), indicator, epsilon);
  }
  return 1.0 - acc / static_cast<Scalar>(num_classes);
}

/// Per-sample weighted objective beta * ce + (1 - beta) * ac.
inline Scalar wac_sample_objective(Scalar beta_i, const LossPair& losses) {
  if (!(beta_i >= 0.0 && beta_i <= 1.0)) {
    throw DimensionError("wac_sample_objective: beta must lie in [0,1]");
  }
  return beta_i * losses.ce + (1.0 - beta_i) * losses.ac;
}

}  // namespace adawac::losses
