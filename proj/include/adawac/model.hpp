// Encoder-decoder pixel-wise classifier families with forward evaluation and
// analytic gradients. The convex_linear family keeps all losses convex in the
// flat parameter vector; the mlp family is the nonconvex demo track.
#pragma once

#include <functional>
#include <optional>

#include "adawac/augment.hpp"
#include "adawac/losses.hpp"
#include "adawac/types.hpp"

namespace adawac::model {

enum class Family { kConvexLinear, kMlp };

struct ModelSpec {
  Family family = Family::kConvexLinear;
  int height = 1;
  int width = 1;
  int num_classes = 2;   // K >= 2
  int latent_dim = 1;    // m >= 1
  int hidden_dim = 0;    // mlp only; 0 means "use latent_dim"
  std::uint64_t decoder_seed = 0;  // fixed decoder of the convex_linear family

  int pixels() const { return height * width; }
  /// Length of the encoder output z.
  int latent_size() const {
    return family == Family::kMlp && hidden_dim > 0 ? hidden_dim : latent_dim;
  }
};

void validate(const ModelSpec& spec);

/// Total length of the flat parameter vector theta.
Index param_dim(const ModelSpec& spec);

/// Spec plus the fixed decoder matrix (convex_linear only). Build once and
/// share; all operations below are pure and thread-safe.
struct Model {
  ModelSpec spec;
  // (d*K) x m, entries iid N(0,1)/sqrt(m) from decoder_seed; row j*K+k holds
  // the readout for pixel j, class k. Empty for the mlp family.
  Matrix decoder;
};

Model make_model(const ModelSpec& spec);

/// Test seam: convex_linear model with an explicit decoder matrix.
Model make_model_with_decoder(const ModelSpec& spec, Matrix decoder);

struct Prediction {
  Vector latent;  // z, length latent_size()
  Matrix probs;   // d x K, rows sum to 1, entries clamped to >= kProbClamp
};

// Flat-parameter block views. convex_linear: [vec(M) | c | u] with M m x d,
// encoder bias c (length m) and per-class logit offset u (length K), so
// logits(j, :) = (D (M x + c))(j, :) + u stay affine in theta; u is what lets
// the decoder predict one class everywhere regardless of the encoder. mlp:
// [vec(W1) | b1 | vec(W2) | b2] with z = tanh(W1 x + b1), logits = W2 z + b2.
struct ConvexLinearBlocks {
  Eigen::Map<const Matrix> encoder;
  Eigen::Map<const Vector> bias;
  Eigen::Map<const Vector> class_bias;
};
struct MlpBlocks {
  Eigen::Map<const Matrix> w1;
  Eigen::Map<const Vector> b1;
  Eigen::Map<const Matrix> w2;
  Eigen::Map<const Vector> b2;
};
ConvexLinearBlocks convex_linear_blocks(const ModelSpec& spec, const Vector& theta);
MlpBlocks mlp_blocks(const ModelSpec& spec, const Vector& theta);

Prediction forward(const Model& model, const Vector& theta, const Vector& x);

/// Encoder output only; bit-identical to forward(...).latent.
Vector encode(const Model& model, const Vector& theta, const Vector& x);

/// Value and analytic gradient of the averaged cross-entropy at theta.
Scalar ce_value(const Model& model, const Vector& theta, const LabeledImage& sample);
Scalar ce_value_grad(const Model& model, const Vector& theta, const LabeledImage& sample,
                     Vector& grad);
Vector grad_ce(const Model& model, const Vector& theta, const LabeledImage& sample);

/// Value and analytic gradient of the consistency penalty
/// lambda_ac * rho(phi(A1 x), phi(A2 x)). The Euclidean metric takes the
/// zero subgradient at coincident latents.
Scalar ac_value(const Model& model, const Vector& theta, const Vector& x,
                const aug::AugmentationOp& a1, const aug::AugmentationOp& a2, Scalar lambda_ac,
                LatentMetric metric);
Scalar ac_value_grad(const Model& model, const Vector& theta, const Vector& x,
                     const aug::AugmentationOp& a1, const aug::AugmentationOp& a2,
                     Scalar lambda_ac, LatentMetric metric, Vector& grad);
Vector grad_ac(const Model& model, const Vector& theta, const Vector& x,
               const aug::AugmentationOp& a1, const aug::AugmentationOp& a2, Scalar lambda_ac,
               LatentMetric metric);

/// Value and analytic gradient of the smoothed dice loss (epsilon > 0).
Scalar dice_value(const Model& model, const Vector& theta, const LabeledImage& sample,
                  Scalar epsilon);
Scalar dice_value_grad(const Model& model, const Vector& theta, const LabeledImage& sample,
                       Scalar epsilon, Vector& grad);
Vector grad_dice(const Model& model, const Vector& theta, const LabeledImage& sample,
                 Scalar epsilon);

/// Which loss a finite-difference check probes, with its evaluation context.
struct LossProbe {
  enum class Kind { kCe, kAc, kDice } kind = Kind::kCe;
  const LabeledImage* sample = nullptr;       // ce / dice
  const Vector* x = nullptr;                  // ac
  const aug::AugmentationOp* a1 = nullptr;    // ac
  const aug::AugmentationOp* a2 = nullptr;    // ac
  Scalar lambda_ac = 1.0;
  LatentMetric metric = LatentMetric::kSquaredEuclidean;
  Scalar dice_epsilon = 1e-5;
};

Scalar probe_value(const Model& model, const Vector& theta, const LossProbe& probe);
Vector probe_grad(const Model& model, const Vector& theta, const LossProbe& probe);

/// Central-difference comparison of the analytic gradient over all
/// coordinates (or `max_coords` seeded-random ones when theta is larger).
/// Returns the max relative error with denominator
/// max(|analytic|, |numeric|, 1e-12).
Scalar finite_diff_check(const Model& model, const Vector& theta, const LossProbe& probe,
                         Scalar step, Index max_coords = 0, std::uint64_t coord_seed = 0);

}  // namespace adawac::model
