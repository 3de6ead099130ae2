// The adaptively weighted augmentation-consistency solver: exponentiated-
// gradient weight updates paired with SGD parameter updates, the dice-
// augmented variant, the mirror-map machinery behind the weight update, and
// the ERM / ACR-only / reweight-only / trim-train / trim-ratio baselines.
#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "adawac/augment.hpp"
#include "adawac/model.hpp"
#include "adawac/types.hpp"

namespace adawac::opt {

// ---------------------------------------------------------------------------
// Weight update and mirror-map machinery.

/// Keeps beta robustly interior; multiplicative updates would otherwise hit
/// the boundary through floating-point underflow once a weight saturates.
inline constexpr Scalar kBetaInteriorEps = 1e-12;

/// Exponentiated-gradient ascent step on one weight:
/// beta' = beta e^{eta ce} / (beta e^{eta ce} + (1-beta) e^{eta ac}),
/// computed with max subtraction in the exponent. eta = 0 and ce = ac both
/// leave beta unchanged exactly.
Scalar eg_update(Scalar beta_i, Scalar ce, Scalar ac, Scalar eta_beta);

/// Negative-entropy mirror map phi_B(B) = sum_ij B_ij log B_ij over n x 2
/// row-stochastic matrices with interior entries.
Scalar mirror_map_B(const Matrix& b);

/// Gradient of the Fenchel conjugate: row-wise softmax of G.
Matrix fenchel_dual_grad_B(const Matrix& g);

/// Bregman divergence sum_ij B_ij log(B_ij / B'_ij); zero exactly at B = B'.
Scalar bregman_B(const Matrix& b, const Matrix& b_prime);

/// Norm |B|_{1,2} = sqrt(sum_i (sum_j |B_ij|)^2) and its dual
/// sqrt(sum_i (max_j |B_ij|)^2).
Scalar norm_12(const Matrix& b);
Scalar norm_12_dual(const Matrix& b);

/// Constant learning rate 2 / sqrt(5 T (gamma^2 c_theta^2 + 2 n c_b^2)).
/// Requires n, T >= 1 and a positive bracket.
Scalar recommended_lr(Scalar gamma, Scalar c_theta, Scalar c_b, Index n, long long iterations);

/// Per-sample weights beta in (0,1)^n with the paired row representation
/// B[i] = [beta_i, 1 - beta_i].
struct WeightState {
  Vector beta;

  static WeightState uniform(Index n) { return {Vector::Constant(n, 0.5)}; }
  Matrix rows() const;
};

/// Euclidean projection onto the ball of radius gamma around center;
/// identity when already inside.
void project_ball(Vector& theta, const Vector& center, Scalar gamma);

// ---------------------------------------------------------------------------
// Training configuration and records.

enum class BaselineMode { kAdaWac, kErm, kAcrOnly, kReweightOnly, kTrimTrain, kTrimRatio };

const char* to_string(BaselineMode mode);
std::optional<BaselineMode> baseline_mode_from_string(const std::string& name);

struct Projection {
  Vector center;
  Scalar gamma = 1.0;
};

struct TrainConfig {
  Scalar eta_theta = 0.01;
  Scalar eta_beta = 1.0;
  Scalar lambda_ac = 1.0;
  long long iterations = 1000;  // T
  LatentMetric metric = LatentMetric::kEuclidean;
  std::optional<Projection> projection;
  bool use_dice = false;
  Scalar dice_epsilon = 1e-5;
  // Demo-track extras; the theory track requires momentum = 0,
  // weight_decay = 0, batch_size = 1.
  Scalar momentum = 0.0;
  Scalar weight_decay = 0.0;
  int batch_size = 1;
  BaselineMode mode = BaselineMode::kAdaWac;
  Scalar trim_ratio = 0.42;  // kTrimRatio only
  std::uint64_t seed = 0;
  bool resample_augmentations = false;  // deviation from the frozen-pair setup
  bool distinct_aug_pairs = false;      // reject coincident pairs when drawing
  bool ce_on_augmented = false;         // evaluate CE on (A1 x, A1 y) instead of the raw sample
  bool epoch_shuffle = false;           // demo-mode sampling without replacement per epoch
  int log_every_epochs = 1;             // trace granularity; <= 0 disables traces
  int checkpoint_every_epochs = 0;      // 0 = final checkpoint only
  Vector theta_init;                    // empty = zeros

  bool is_theory_track() const {
    return momentum == 0.0 && weight_decay == 0.0 && batch_size == 1;
  }
};

void validate(const TrainConfig& config, Index n);

/// Canonical JSON of the fields that define the trajectory; hashed into
/// checkpoints so resumes can detect config mismatches.
std::string config_canonical_json(const TrainConfig& config);
std::string config_hash(const TrainConfig& config);

struct Checkpoint {
  long long iteration = 0;
  Vector theta;
  Vector beta;
  Vector theta_sum;  // running sums; exact resume needs sums, not averages
  Vector beta_sum;
  Vector velocity;  // momentum buffer, empty when momentum = 0
  std::string rng_state;
  std::string hash;

  Vector theta_bar() const { return theta_sum / static_cast<Scalar>(iteration); }
  Vector beta_bar() const { return beta_sum / static_cast<Scalar>(iteration); }
};

/// Per-epoch traces: row e holds the per-sample values at logged epoch
/// epochs[e] (losses evaluated at the then-current theta).
struct TraceBlock {
  std::vector<long long> epochs;
  Matrix ce;
  Matrix ac;
  Matrix beta;
};

struct GradStats {
  Scalar max_sample_grad_norm = 0.0;  // max over visited (theta_t, i_t) of the weighted grad norm
  Scalar max_sample_loss = 0.0;       // max over visited pairs of max(ce, ac)
};

struct RunRecord {
  long long iterations = 0;
  Vector theta_final;
  Vector theta_bar;
  Vector beta_final;
  Vector beta_bar;
  TraceBlock traces;
  std::vector<Checkpoint> checkpoints;  // at the configured cadence, plus final
  GradStats grad_stats;
};

// ---------------------------------------------------------------------------
// Objective plumbing shared with the analysis instruments.

using AugPairs = std::vector<std::pair<aug::AugmentationOp, aug::AugmentationOp>>;

/// The frozen augmentation pairs used by run(): n pairs drawn up front from
/// the config seed. With `distinct` the second op is redrawn until it differs
/// from the first, mirroring continuous-augmentation pipelines where
/// coincident pairs have probability zero.
AugPairs frozen_pairs(std::uint64_t seed, Index n, int height, int width, bool distinct = false);

/// Non-owning view of one weighted-consistency problem instance.
struct WacProblem {
  const model::Model& model;
  const std::vector<LabeledImage>& data;
  const AugPairs& pairs;
  Scalar lambda_ac = 1.0;
  LatentMetric metric = LatentMetric::kEuclidean;
};

/// ce_i and ac_i for every sample at theta.
std::pair<Vector, Vector> per_sample_losses(const WacProblem& problem, const Vector& theta);

/// (1/n) sum_i beta_i ce_i + (1 - beta_i) ac_i.
Scalar wac_objective(const WacProblem& problem, const Vector& theta, const Vector& beta);

/// Full-batch gradient of wac_objective in theta.
Vector wac_objective_grad(const WacProblem& problem, const Vector& theta, const Vector& beta);

// ---------------------------------------------------------------------------
// Steps and the training loop.

/// One solver iteration on a single sample: EG-update beta_i from the losses
/// at theta, then theta <- theta - eta_theta (beta_i' grad_ce +
/// (1 - beta_i') grad_ac) [+ grad_dice when configured], then the optional
/// projection. Returns the (ce, ac) pair that drove the weight update.
LossPair adawac_step(const model::Model& model, const LabeledImage& sample,
                     const aug::AugmentationOp& a1, const aug::AugmentationOp& a2,
                     const TrainConfig& config, Vector& theta, Scalar& beta_i);

/// SGD step on the mean cross-entropy of the batch samples that survive
/// trimming (trim-train drops all-background samples; trim-ratio keeps the
/// top ceil((1-r) B) by CE, ties to the lower sample index). The dice term,
/// when enabled, always uses the untrimmed batch. An all-trimmed batch skips
/// the step.
void trim_train_step(const model::Model& model, const std::vector<LabeledImage>& data,
                     const std::vector<Index>& batch, const TrainConfig& config, Vector& theta,
                     Vector* velocity = nullptr);
void trim_ratio_step(const model::Model& model, const std::vector<LabeledImage>& data,
                     const std::vector<Index>& batch, Scalar ratio, const TrainConfig& config,
                     Vector& theta, Vector* velocity = nullptr);

/// Runs the configured method for config.iterations steps. beta starts at
/// 1/2 everywhere; running averages theta_bar / beta_bar are maintained
/// exactly over every iteration. Pass a checkpoint to resume; the trajectory
/// continues bit-for-bit.
RunRecord run(const model::Model& model, const std::vector<LabeledImage>& data,
              const TrainConfig& config, const Checkpoint* resume = nullptr);

/// Extracts the optimizer-facing view of a sample list (drops metadata).
std::vector<LabeledImage> training_view(const std::vector<Sample>& samples);

}  // namespace adawac::opt
