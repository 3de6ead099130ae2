// Shared test fixtures and independent oracles. Everything here must stay
// independent of the implementation paths it checks: finite differences use
// only loss values, the mirror step uses grid search, distances use all-pairs
// brute force.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "adawac/model.hpp"
#include "adawac/types.hpp"

namespace testutil {

using namespace adawac;

inline Vector random_theta(Rng& rng, Index dim, double scale = 0.4) {
  Vector theta(dim);
  for (Index i = 0; i < dim; ++i) theta(i) = scale * normal01(rng);
  return theta;
}

inline LabeledImage random_sample(Rng& rng, const model::ModelSpec& spec) {
  LabeledImage s;
  s.x.resize(spec.pixels());
  for (Index i = 0; i < s.x.size(); ++i) s.x(i) = normal01(rng);
  s.y.resize(spec.pixels());
  for (Index i = 0; i < s.y.size(); ++i) {
    s.y(i) = static_cast<int>(uniform_index(rng, spec.num_classes));
  }
  return s;
}

/// Row-stochastic random probabilities.
inline Matrix random_probs(Rng& rng, Index d, Index k) {
  Matrix probs(d, k);
  for (Index j = 0; j < d; ++j) {
    double sum = 0.0;
    for (Index c = 0; c < k; ++c) {
      probs(j, c) = 0.05 + uniform01(rng);
      sum += probs(j, c);
    }
    probs.row(j) /= sum;
  }
  return probs;
}

/// Central-difference gradient from loss values only.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& theta,
                          double step) {
  Vector grad(theta.size());
  Vector probe = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    probe(i) = theta(i) + step;
    const double fp = f(probe);
    probe(i) = theta(i) - step;
    const double fm = f(probe);
    probe(i) = theta(i);
    grad(i) = (fp - fm) / (2.0 * step);
  }
  return grad;
}

/// Norm-based relative disagreement between an analytic gradient and the
/// finite-difference oracle.
inline double fd_rel_error(const std::function<double(const Vector&)>& f, const Vector& theta,
                           const Vector& analytic, double step = 1e-6) {
  const Vector numeric = fd_gradient(f, theta, step);
  const double denom = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / denom;
}

/// A convex_linear sample whose labels are realized with a huge margin, so
/// the forward probabilities saturate to exactly 1 on the labeled class and
/// the cross-entropy is exactly zero.
struct SaturatedFit {
  model::Model model;
  Vector theta;
  LabeledImage sample;
};

inline SaturatedFit make_saturated_fit(std::uint64_t seed) {
  model::ModelSpec spec;
  spec.family = model::Family::kConvexLinear;
  spec.height = 2;
  spec.width = 2;
  spec.num_classes = 2;
  spec.latent_dim = 3;
  spec.decoder_seed = seed;
  model::Model m = model::make_model(spec);
  Rng rng(seed + 1);
  Vector theta = random_theta(rng, model::param_dim(spec), 1.0);
  LabeledImage sample = random_sample(rng, spec);
  theta *= 5e3;  // saturate the softmax
  const model::Prediction pred = model::forward(m, theta, sample.x);
  for (Index j = 0; j < pred.probs.rows(); ++j) {
    Index argmax = 0;
    pred.probs.row(j).maxCoeff(&argmax);
    sample.y(j) = static_cast<int>(argmax);
  }
  return {std::move(m), std::move(theta), std::move(sample)};
}

}  // namespace testutil
