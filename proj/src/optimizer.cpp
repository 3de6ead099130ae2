#include "adawac/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace adawac::opt {
namespace {

using nlohmann::json;

void check_interior_rows(const Matrix& b, const char* who) {
  if (b.cols() != 2) throw DimensionError(std::string(who) + ": expected an n x 2 matrix");
  for (Index i = 0; i < b.rows(); ++i) {
    if (!(b(i, 0) > 0.0 && b(i, 1) > 0.0)) {
      throw DimensionError(std::string(who) + ": row " + std::to_string(i) +
                           " is on the simplex boundary");
    }
  }
}

LabeledImage augmented_sample(const LabeledImage& sample, const aug::AugmentationOp& op) {
  LabeledImage out;
  out.x = aug::apply(op, sample.x);
  out.y.resize(sample.y.size());
  for (Index p = 0; p < sample.y.size(); ++p) out.y(p) = sample.y(op.perm(p));
  return out;
}

std::string serialize_rng(const Rng& sampling, const Rng& resample) {
  std::ostringstream ss;
  ss << sampling << '\n' << resample;
  return ss.str();
}

void restore_rng(const std::string& state, Rng& sampling, Rng& resample) {
  std::istringstream ss(state);
  ss >> sampling >> resample;
  if (!ss) throw ConfigError("checkpoint: malformed rng_state");
}

// Lazily accumulated running sum of the beta trajectory. Only the changed
// coordinate is touched per iteration; everything is brought current at
// flush points (checkpoints and the end of the run), which therefore must
// line up between an uninterrupted run and a resumed one.
struct BetaAverager {
  Vector sum;
  std::vector<long long> flushed_at;

  static BetaAverager fresh(Index n, long long iteration) {
    return {Vector::Zero(n), std::vector<long long>(static_cast<std::size_t>(n), iteration)};
  }

  // Call before overwriting beta(i) at iteration t; `old_value` was in
  // effect for iterations (flushed_at[i], t-1].
  void on_change(Index i, Scalar old_value, long long t) {
    sum(i) += old_value * static_cast<Scalar>(t - 1 - flushed_at[static_cast<std::size_t>(i)]);
    flushed_at[static_cast<std::size_t>(i)] = t - 1;
  }

  void flush(const Vector& beta, long long t) {
    for (Index i = 0; i < beta.size(); ++i) {
      sum(i) += beta(i) * static_cast<Scalar>(t - flushed_at[static_cast<std::size_t>(i)]);
      flushed_at[static_cast<std::size_t>(i)] = t;
    }
  }
};

void check_losses_finite(const LossPair& losses, long long iteration, Index sample) {
  if (!std::isfinite(losses.ce) || !std::isfinite(losses.ac) || losses.ce > 1e12 ||
      losses.ac > 1e12) {
    throw NumericError("divergence at iteration " + std::to_string(iteration) + ", sample " +
                       std::to_string(sample) + ": ce=" + std::to_string(losses.ce) +
                       " ac=" + std::to_string(losses.ac));
  }
}

// Shared tail of every step: weight decay, momentum, learning-rate step,
// optional projection. The momentum-free path stays a plain SGD update.
void apply_update(const TrainConfig& config, const Vector& grad, Vector& theta,
                  Vector* velocity) {
  if (config.momentum == 0.0 && config.weight_decay == 0.0) {
    theta -= config.eta_theta * grad;
  } else {
    Vector g = grad;
    if (config.weight_decay > 0.0) g += config.weight_decay * theta;
    if (velocity == nullptr) throw DimensionError("momentum step requires a velocity buffer");
    if (velocity->size() == 0) velocity->setZero(theta.size());
    *velocity = config.momentum * *velocity + g;
    theta -= config.eta_theta * *velocity;
  }
  if (config.projection) project_ball(theta, config.projection->center, config.projection->gamma);
}

// Per-sample weighted gradient of the solver objective at theta; performs the
// EG update on beta_i first and accumulates with the updated weight.
LossPair weighted_sample_grad(const model::Model& model, const LabeledImage& sample,
                              const aug::AugmentationOp& a1, const aug::AugmentationOp& a2,
                              const TrainConfig& config, const Vector& theta, Scalar& beta_i,
                              Vector& grad_accum, GradStats* stats) {
  LossPair losses;
  Vector g_ce;
  if (config.ce_on_augmented) {
    losses.ce = model::ce_value_grad(model, theta, augmented_sample(sample, a1), g_ce);
  } else {
    losses.ce = model::ce_value_grad(model, theta, sample, g_ce);
  }
  Vector g_ac;
  if (config.lambda_ac > 0.0) {
    losses.ac = model::ac_value_grad(model, theta, sample.x, a1, a2, config.lambda_ac,
                                     config.metric, g_ac);
  } else {
    losses.ac = 0.0;
    g_ac = Vector::Zero(theta.size());
  }
  beta_i = eg_update(beta_i, losses.ce, losses.ac, config.eta_beta);
  Vector weighted = beta_i * g_ce + (1.0 - beta_i) * g_ac;
  if (config.use_dice) {
    Vector g_dice;
    model::dice_value_grad(model, theta, sample, config.dice_epsilon, g_dice);
    weighted += g_dice;
  }
  if (stats != nullptr) {
    stats->max_sample_grad_norm = std::max(stats->max_sample_grad_norm, weighted.norm());
    stats->max_sample_loss = std::max(stats->max_sample_loss, std::max(losses.ce, losses.ac));
  }
  grad_accum += weighted;
  return losses;
}

struct CeGrads {
  std::vector<Scalar> values;
  std::vector<Vector> grads;
};

CeGrads batch_ce_grads(const model::Model& model, const std::vector<LabeledImage>& data,
                       const std::vector<Index>& batch, const Vector& theta) {
  CeGrads out;
  out.values.reserve(batch.size());
  out.grads.reserve(batch.size());
  for (const Index i : batch) {
    Vector g;
    out.values.push_back(model::ce_value_grad(model, theta, data[static_cast<std::size_t>(i)], g));
    out.grads.push_back(std::move(g));
  }
  return out;
}

// Mean-CE SGD step over the kept batch positions (ascending order), with the
// dice term taken over the untrimmed batch. No survivors: the CE part is
// skipped but dice still applies.
void ce_family_step(const model::Model& model, const std::vector<LabeledImage>& data,
                    const std::vector<Index>& batch, const std::vector<std::size_t>& kept,
                    const CeGrads& ce, const TrainConfig& config, Vector& theta,
                    Vector* velocity) {
  Vector grad = Vector::Zero(theta.size());
  bool any = false;
  if (!kept.empty()) {
    for (const std::size_t pos : kept) grad += ce.grads[pos];
    grad /= static_cast<Scalar>(kept.size());
    any = true;
  }
  if (config.use_dice) {
    Vector dice_grad = Vector::Zero(theta.size());
    Vector g;
    for (const Index i : batch) {
      model::dice_value_grad(model, theta, data[static_cast<std::size_t>(i)],
                             config.dice_epsilon, g);
      dice_grad += g;
    }
    grad += dice_grad / static_cast<Scalar>(batch.size());
    any = true;
  }
  if (any) apply_update(config, grad, theta, velocity);
}

std::vector<std::size_t> trim_train_kept(const std::vector<LabeledImage>& data,
                                         const std::vector<Index>& batch) {
  std::vector<std::size_t> kept;
  for (std::size_t pos = 0; pos < batch.size(); ++pos) {
    const IntVector& y = data[static_cast<std::size_t>(batch[pos])].y;
    if ((y.array() != 0).any()) kept.push_back(pos);
  }
  return kept;
}

std::vector<std::size_t> trim_ratio_kept(const std::vector<Index>& batch,
                                         const std::vector<Scalar>& ce_values, Scalar ratio) {
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (ce_values[a] != ce_values[b]) return ce_values[a] > ce_values[b];
    if (batch[a] != batch[b]) return batch[a] < batch[b];
    return a < b;
  });
  const auto keep =
      static_cast<std::size_t>(std::ceil((1.0 - ratio) * static_cast<double>(batch.size())));
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

Scalar eg_update(Scalar beta_i, Scalar ce, Scalar ac, Scalar eta_beta) {
  if (!std::isfinite(beta_i) || !std::isfinite(ce) || !std::isfinite(ac) ||
      !std::isfinite(eta_beta)) {
    throw NumericError("eg_update: non-finite input");
  }
  if (eta_beta == 0.0 || ce == ac) return beta_i;  // symmetric multipliers cancel
  const Scalar a = eta_beta * ce;
  const Scalar b = eta_beta * ac;
  const Scalar m = std::max(a, b);
  const Scalar num = beta_i * std::exp(a - m);
  const Scalar den = num + (1.0 - beta_i) * std::exp(b - m);
  return std::clamp(num / den, kBetaInteriorEps, 1.0 - kBetaInteriorEps);
}

Scalar mirror_map_B(const Matrix& b) {
  check_interior_rows(b, "mirror_map_B");
  return (b.array() * b.array().log()).sum();
}

Matrix fenchel_dual_grad_B(const Matrix& g) {
  if (g.cols() != 2) throw DimensionError("fenchel_dual_grad_B: expected an n x 2 matrix");
  if (!g.allFinite()) throw NumericError("fenchel_dual_grad_B: non-finite input");
  Matrix out(g.rows(), 2);
  for (Index i = 0; i < g.rows(); ++i) {
    const Scalar m = g.row(i).maxCoeff();
    const Scalar e0 = std::exp(g(i, 0) - m);
    const Scalar e1 = std::exp(g(i, 1) - m);
    out(i, 0) = e0 / (e0 + e1);
    out(i, 1) = e1 / (e0 + e1);
  }
  return out;
}

Scalar bregman_B(const Matrix& b, const Matrix& b_prime) {
  check_interior_rows(b, "bregman_B");
  check_interior_rows(b_prime, "bregman_B");
  if (b.rows() != b_prime.rows()) throw DimensionError("bregman_B: row counts differ");
  return (b.array() * (b.array() / b_prime.array()).log()).sum();
}

Scalar norm_12(const Matrix& b) {
  return std::sqrt(b.cwiseAbs().rowwise().sum().array().square().sum());
}

Scalar norm_12_dual(const Matrix& b) {
  return std::sqrt(b.cwiseAbs().rowwise().maxCoeff().array().square().sum());
}

Scalar recommended_lr(Scalar gamma, Scalar c_theta, Scalar c_b, Index n, long long iterations) {
  if (gamma < 0.0 || c_theta < 0.0 || c_b < 0.0 || n < 1 || iterations < 1) {
    throw DimensionError("recommended_lr: need gamma, c_theta, c_b >= 0 and n, T >= 1");
  }
  const Scalar bracket = gamma * gamma * c_theta * c_theta +
                         2.0 * static_cast<Scalar>(n) * c_b * c_b;
  if (!(bracket > 0.0)) throw DimensionError("recommended_lr: constants bracket must be positive");
  return 2.0 / std::sqrt(5.0 * static_cast<Scalar>(iterations) * bracket);
}

Matrix WeightState::rows() const {
  Matrix b(beta.size(), 2);
  b.col(0) = beta;
  b.col(1) = Vector::Ones(beta.size()) - beta;
  return b;
}

void project_ball(Vector& theta, const Vector& center, Scalar gamma) {
  if (theta.size() != center.size()) throw DimensionError("project_ball: size mismatch");
  const Scalar r = (theta - center).norm();
  if (r > gamma) theta = center + (theta - center) * (gamma / r);
}

const char* to_string(BaselineMode mode) {
  switch (mode) {
    case BaselineMode::kAdaWac: return "adawac";
    case BaselineMode::kErm: return "erm";
    case BaselineMode::kAcrOnly: return "acr_only";
    case BaselineMode::kReweightOnly: return "reweight_only";
    case BaselineMode::kTrimTrain: return "trim_train";
    default: return "trim_ratio";
  }
}

std::optional<BaselineMode> baseline_mode_from_string(const std::string& name) {
  if (name == "adawac") return BaselineMode::kAdaWac;
  if (name == "erm") return BaselineMode::kErm;
  if (name == "acr_only") return BaselineMode::kAcrOnly;
  if (name == "reweight_only") return BaselineMode::kReweightOnly;
  if (name == "trim_train") return BaselineMode::kTrimTrain;
  if (name == "trim_ratio") return BaselineMode::kTrimRatio;
  return std::nullopt;
}

void validate(const TrainConfig& config, Index n) {
  if (n < 1) throw DimensionError("train: dataset is empty");
  if (config.eta_theta < 0.0 || config.eta_beta < 0.0) {
    throw DimensionError("train: learning rates must be >= 0");
  }
  if (config.lambda_ac < 0.0) throw DimensionError("train: lambda_ac must be >= 0");
  if (config.iterations < 0) throw DimensionError("train: iterations must be >= 0");
  if (config.batch_size < 1) throw DimensionError("train: batch_size must be >= 1");
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) {
    throw DimensionError("train: momentum must lie in [0, 1)");
  }
  if (config.weight_decay < 0.0) throw DimensionError("train: weight_decay must be >= 0");
  if (config.use_dice && !(config.dice_epsilon > 0.0)) {
    throw DimensionError("train: dice_epsilon must be > 0");
  }
  if (config.mode == BaselineMode::kTrimRatio &&
      !(config.trim_ratio >= 0.0 && config.trim_ratio < 1.0)) {
    throw DimensionError("train: trim_ratio must lie in [0, 1)");
  }
  if (config.projection && !(config.projection->gamma > 0.0)) {
    throw DimensionError("train: projection gamma must be > 0");
  }
}

std::string config_canonical_json(const TrainConfig& config) {
  json doc;
  doc["eta_theta"] = config.eta_theta;
  doc["eta_beta"] = config.eta_beta;
  doc["lambda_ac"] = config.lambda_ac;
  doc["metric"] = config.metric == LatentMetric::kEuclidean ? "euclidean" : "squared_euclidean";
  doc["use_dice"] = config.use_dice;
  doc["dice_epsilon"] = config.dice_epsilon;
  doc["momentum"] = config.momentum;
  doc["weight_decay"] = config.weight_decay;
  doc["batch_size"] = config.batch_size;
  doc["mode"] = to_string(config.mode);
  doc["trim_ratio"] = config.trim_ratio;
  doc["seed"] = config.seed;
  doc["resample_augmentations"] = config.resample_augmentations;
  doc["distinct_aug_pairs"] = config.distinct_aug_pairs;
  doc["ce_on_augmented"] = config.ce_on_augmented;
  doc["epoch_shuffle"] = config.epoch_shuffle;
  doc["log_every_epochs"] = config.log_every_epochs;
  doc["checkpoint_every_epochs"] = config.checkpoint_every_epochs;
  if (config.projection) {
    doc["projection_gamma"] = config.projection->gamma;
    doc["projection_center_hash"] = to_hex(fnv1a64(
        {reinterpret_cast<const char*>(config.projection->center.data()),
         static_cast<std::size_t>(config.projection->center.size()) * sizeof(Scalar)}));
  }
  if (config.theta_init.size() > 0) {
    doc["theta_init_hash"] = to_hex(
        fnv1a64({reinterpret_cast<const char*>(config.theta_init.data()),
                 static_cast<std::size_t>(config.theta_init.size()) * sizeof(Scalar)}));
  }
  // iterations intentionally excluded: a trajectory prefix does not depend
  // on the final T, which lets a shorter run's checkpoint seed a longer run.
  return doc.dump();
}

std::string config_hash(const TrainConfig& config) {
  return to_hex(fnv1a64(config_canonical_json(config)));
}

AugPairs frozen_pairs(std::uint64_t seed, Index n, int height, int width, bool distinct) {
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 101);
  AugPairs pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto pair = aug::sample_pair(rng, height, width);
    while (distinct && pair.second.rotation_quarters == pair.first.rotation_quarters &&
           pair.second.mirrored == pair.first.mirrored) {
      pair.second = aug::sample_op(rng, height, width);
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::pair<Vector, Vector> per_sample_losses(const WacProblem& problem, const Vector& theta) {
  const Index n = static_cast<Index>(problem.data.size());
  Vector ce(n);
  Vector ac(n);
  for (Index i = 0; i < n; ++i) {
    const auto& sample = problem.data[static_cast<std::size_t>(i)];
    const auto& [a1, a2] = problem.pairs[static_cast<std::size_t>(i)];
    ce(i) = model::ce_value(problem.model, theta, sample);
    ac(i) = model::ac_value(problem.model, theta, sample.x, a1, a2, problem.lambda_ac,
                            problem.metric);
  }
  return {std::move(ce), std::move(ac)};
}

Scalar wac_objective(const WacProblem& problem, const Vector& theta, const Vector& beta) {
  const auto [ce, ac] = per_sample_losses(problem, theta);
  if (beta.size() != ce.size()) throw DimensionError("wac_objective: beta length != n");
  return (beta.cwiseProduct(ce) + (Vector::Ones(ce.size()) - beta).cwiseProduct(ac)).mean();
}

Vector wac_objective_grad(const WacProblem& problem, const Vector& theta, const Vector& beta) {
  const Index n = static_cast<Index>(problem.data.size());
  if (beta.size() != n) throw DimensionError("wac_objective_grad: beta length != n");
  Vector grad = Vector::Zero(theta.size());
  Vector g;
  for (Index i = 0; i < n; ++i) {
    const auto& sample = problem.data[static_cast<std::size_t>(i)];
    const auto& [a1, a2] = problem.pairs[static_cast<std::size_t>(i)];
    model::ce_value_grad(problem.model, theta, sample, g);
    grad += beta(i) * g;
    model::ac_value_grad(problem.model, theta, sample.x, a1, a2, problem.lambda_ac,
                         problem.metric, g);
    grad += (1.0 - beta(i)) * g;
  }
  return grad / static_cast<Scalar>(n);
}

LossPair adawac_step(const model::Model& model, const LabeledImage& sample,
                     const aug::AugmentationOp& a1, const aug::AugmentationOp& a2,
                     const TrainConfig& config, Vector& theta, Scalar& beta_i) {
  Vector grad = Vector::Zero(theta.size());
  const LossPair losses =
      weighted_sample_grad(model, sample, a1, a2, config, theta, beta_i, grad, nullptr);
  apply_update(config, grad, theta, nullptr);
  return losses;
}

void trim_train_step(const model::Model& model, const std::vector<LabeledImage>& data,
                     const std::vector<Index>& batch, const TrainConfig& config, Vector& theta,
                     Vector* velocity) {
  const CeGrads ce = batch_ce_grads(model, data, batch, theta);
  ce_family_step(model, data, batch, trim_train_kept(data, batch), ce, config, theta, velocity);
}

void trim_ratio_step(const model::Model& model, const std::vector<LabeledImage>& data,
                     const std::vector<Index>& batch, Scalar ratio, const TrainConfig& config,
                     Vector& theta, Vector* velocity) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw DimensionError("trim_ratio: ratio must be in [0,1)");
  const CeGrads ce = batch_ce_grads(model, data, batch, theta);
  ce_family_step(model, data, batch, trim_ratio_kept(batch, ce.values, ratio), ce, config, theta,
                 velocity);
}

std::vector<LabeledImage> training_view(const std::vector<Sample>& samples) {
  std::vector<LabeledImage> view;
  view.reserve(samples.size());
  for (const Sample& s : samples) view.push_back(s.data);
  return view;
}

RunRecord run(const model::Model& model, const std::vector<LabeledImage>& data,
              const TrainConfig& config_in, const Checkpoint* resume) {
  const Index n = static_cast<Index>(data.size());
  validate(config_in, n);

  // Ablation modes are literal parameter pinnings of the solver, so the
  // reductions hold bit-for-bit.
  TrainConfig config = config_in;
  if (config.mode == BaselineMode::kAcrOnly) config.eta_beta = 0.0;
  if (config.mode == BaselineMode::kReweightOnly) config.lambda_ac = 0.0;
  if (config.mode == BaselineMode::kErm) config.lambda_ac = 0.0;

  const Index dim = model::param_dim(model.spec);
  if (config.projection && config.projection->center.size() != dim) {
    throw DimensionError("train: projection center has wrong dimension");
  }

  const bool eg_family = config.mode == BaselineMode::kAdaWac ||
                         config.mode == BaselineMode::kAcrOnly ||
                         config.mode == BaselineMode::kReweightOnly;

  Vector theta;
  Vector beta;
  Vector theta_sum;
  BetaAverager averager;
  Vector velocity;
  Rng sampling_rng(config.seed * 0x9e3779b97f4a7c15ull + 7);
  Rng resample_rng(config.seed * 0x9e3779b97f4a7c15ull + 8);
  long long start = 0;

  const std::string expected_hash = config_hash(config_in);
  if (resume != nullptr) {
    if (resume->hash != expected_hash) {
      throw ConfigError("resume: checkpoint config hash mismatch (" + resume->hash + " vs " +
                        expected_hash + ")");
    }
    theta = resume->theta;
    beta = resume->beta;
    theta_sum = resume->theta_sum;
    averager = BetaAverager::fresh(n, resume->iteration);
    averager.sum = resume->beta_sum;
    velocity = resume->velocity;
    restore_rng(resume->rng_state, sampling_rng, resample_rng);
    start = resume->iteration;
  } else {
    theta = config.theta_init.size() > 0 ? config.theta_init : Vector::Zero(dim);
    if (theta.size() != dim) throw DimensionError("train: theta_init has wrong dimension");
    if (config.projection) {
      project_ball(theta, config.projection->center, config.projection->gamma);
    }
    beta = Vector::Constant(n, eg_family ? 0.5 : 1.0);
    theta_sum = Vector::Zero(dim);
    averager = BetaAverager::fresh(n, 0);
  }

  AugPairs pairs = frozen_pairs(config.seed, n, model.spec.height, model.spec.width,
                                config.distinct_aug_pairs);
  const WacProblem problem{model, data, pairs, config.lambda_ac, config.metric};

  RunRecord record;
  record.iterations = config.iterations;

  // Epoch-shuffle sampling state (demo mode); rebuilt deterministically.
  std::vector<Index> shuffle_order;
  std::size_t shuffle_cursor = 0;
  auto draw_index = [&]() -> Index {
    if (!config.epoch_shuffle) return static_cast<Index>(uniform_index(sampling_rng, n));
    if (shuffle_cursor == shuffle_order.size()) {
      shuffle_order.resize(static_cast<std::size_t>(n));
      std::iota(shuffle_order.begin(), shuffle_order.end(), Index{0});
      for (std::size_t i = shuffle_order.size(); i > 1; --i) {
        std::swap(shuffle_order[i - 1], shuffle_order[uniform_index(sampling_rng, i)]);
      }
      shuffle_cursor = 0;
    }
    return shuffle_order[shuffle_cursor++];
  };

  auto make_checkpoint = [&](long long t) {
    Checkpoint ckpt;
    ckpt.iteration = t;
    ckpt.theta = theta;
    ckpt.beta = beta;
    ckpt.theta_sum = theta_sum;
    ckpt.beta_sum = averager.sum;
    ckpt.velocity = velocity;
    ckpt.rng_state = serialize_rng(sampling_rng, resample_rng);
    ckpt.hash = expected_hash;
    return ckpt;
  };

  std::vector<Vector> trace_ce, trace_ac, trace_beta;
  auto log_epoch = [&](long long epoch) {
    auto [ce, ac] = per_sample_losses(problem, theta);
    record.traces.epochs.push_back(epoch);
    trace_ce.push_back(std::move(ce));
    trace_ac.push_back(std::move(ac));
    trace_beta.push_back(beta);
  };

  std::vector<Index> batch;
  const long long batch_size = config.batch_size;
  for (long long t = start + 1; t <= config.iterations; ++t) {
    batch.clear();
    for (long long b = 0; b < batch_size; ++b) batch.push_back(draw_index());

    if (eg_family) {
      Vector grad = Vector::Zero(dim);
      for (const Index i : batch) {
        const auto& sample = data[static_cast<std::size_t>(i)];
        std::pair<aug::AugmentationOp, aug::AugmentationOp> fresh;
        const auto* pair = &pairs[static_cast<std::size_t>(i)];
        if (config.resample_augmentations) {
          fresh = aug::sample_pair(resample_rng, model.spec.height, model.spec.width);
          while (config.distinct_aug_pairs &&
                 fresh.second.rotation_quarters == fresh.first.rotation_quarters &&
                 fresh.second.mirrored == fresh.first.mirrored) {
            fresh.second = aug::sample_op(resample_rng, model.spec.height, model.spec.width);
          }
          pair = &fresh;
        }
        const Scalar old_beta = beta(i);
        Scalar b_i = old_beta;
        const LossPair losses = weighted_sample_grad(model, sample, pair->first, pair->second,
                                                     config, theta, b_i, grad,
                                                     &record.grad_stats);
        check_losses_finite(losses, t, i);
        if (b_i != old_beta) {
          averager.on_change(i, old_beta, t);
          beta(i) = b_i;
        }
      }
      apply_update(config, (grad / static_cast<Scalar>(batch_size)).eval(), theta,
                   config.momentum > 0.0 ? &velocity : nullptr);
    } else {
      const CeGrads ce = batch_ce_grads(model, data, batch, theta);
      for (std::size_t pos = 0; pos < batch.size(); ++pos) {
        check_losses_finite({ce.values[pos], 0.0}, t, batch[pos]);
      }
      std::vector<std::size_t> kept;
      switch (config.mode) {
        case BaselineMode::kErm:
          kept = trim_ratio_kept(batch, ce.values, 0.0);
          break;
        case BaselineMode::kTrimTrain:
          kept = trim_train_kept(data, batch);
          break;
        default:
          kept = trim_ratio_kept(batch, ce.values, config.trim_ratio);
          break;
      }
      ce_family_step(model, data, batch, kept, ce, config, theta,
                     config.momentum > 0.0 ? &velocity : nullptr);
    }

    theta_sum += theta;

    const long long epochs_before = (t - 1) * batch_size / n;
    const long long epochs_now = t * batch_size / n;
    for (long long e = epochs_before + 1; e <= epochs_now; ++e) {
      if (config.log_every_epochs > 0 && e % config.log_every_epochs == 0) log_epoch(e);
      if (config.checkpoint_every_epochs > 0 && e % config.checkpoint_every_epochs == 0 &&
          t < config.iterations) {
        averager.flush(beta, t);
        record.checkpoints.push_back(make_checkpoint(t));
      }
    }
  }

  const Index rows = static_cast<Index>(trace_ce.size());
  record.traces.ce.resize(rows, n);
  record.traces.ac.resize(rows, n);
  record.traces.beta.resize(rows, n);
  for (Index r = 0; r < rows; ++r) {
    record.traces.ce.row(r) = trace_ce[static_cast<std::size_t>(r)].transpose();
    record.traces.ac.row(r) = trace_ac[static_cast<std::size_t>(r)].transpose();
    record.traces.beta.row(r) = trace_beta[static_cast<std::size_t>(r)].transpose();
  }

  averager.flush(beta, config.iterations);
  record.checkpoints.push_back(make_checkpoint(config.iterations));
  record.theta_final = theta;
  record.beta_final = beta;
  if (config.iterations > 0) {
    record.theta_bar = theta_sum / static_cast<Scalar>(config.iterations);
    record.beta_bar = averager.sum / static_cast<Scalar>(config.iterations);
  } else {
    record.theta_bar = theta;
    record.beta_bar = beta;
  }
  return record;
}

}  // namespace adawac::opt
