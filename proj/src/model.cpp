#include "adawac/model.hpp"

#include <cmath>
#include <limits>

namespace adawac::model {
namespace {

void check_theta(const ModelSpec& spec, const Vector& theta) {
  if (theta.size() != param_dim(spec)) {
    throw DimensionError("theta length " + std::to_string(theta.size()) +
                         " != expected param dim " + std::to_string(param_dim(spec)));
  }
}

void check_x(const ModelSpec& spec, const Vector& x) {
  if (x.size() != spec.pixels()) {
    throw DimensionError("pixel vector length " + std::to_string(x.size()) + " != d = " +
                         std::to_string(spec.pixels()));
  }
}

// Row-wise softmax with max subtraction, clamped to >= kProbClamp.
Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.rows(); ++j) {
    const Scalar m = logits.row(j).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(j).array() - m).exp();
    probs.row(j) = (e / e.sum()).cwiseMax(kProbClamp);
  }
  return probs;
}

Matrix logits_convex_linear(const Model& model, const Vector& z, const Vector& class_bias) {
  const int d = model.spec.pixels();
  const int num_classes = model.spec.num_classes;
  Vector flat = model.decoder * z;  // length d*K, pixel-major rows
  Matrix logits = Eigen::Map<const Matrix>(flat.data(), num_classes, d).transpose();
  logits.rowwise() += class_bias.transpose();
  return logits;
}

struct MlpForward {
  Vector z;       // tanh activations, the latent
  Matrix logits;  // d x K
};

MlpForward mlp_forward(const ModelSpec& spec, const Vector& theta, const Vector& x) {
  const auto blocks = mlp_blocks(spec, theta);
  MlpForward f;
  f.z = (blocks.w1 * x + blocks.b1).array().tanh();
  Vector flat = blocks.w2 * f.z + blocks.b2;
  f.logits = Eigen::Map<const Matrix>(flat.data(), spec.num_classes, spec.pixels()).transpose();
  return f;
}

// Backpropagates d(loss)/d(logits) [d x K] and, for branch losses that touch
// only the encoder, d(loss)/d(z), into the flat gradient.
void backprop_convex_linear(const Model& model, const Vector& x, const Matrix& g_logits,
                            Vector& grad) {
  const ModelSpec& spec = model.spec;
  const int m = spec.latent_size();
  const int d = spec.pixels();
  Matrix g_t = g_logits.transpose();  // K x d, pixel-major when flattened
  Eigen::Map<const Vector> g_flat(g_t.data(), g_t.size());
  Vector g_z = model.decoder.transpose() * g_flat;
  Eigen::Map<Matrix> g_m(grad.data(), m, d);
  Eigen::Map<Vector> g_c(grad.data() + static_cast<Index>(m) * d, m);
  Eigen::Map<Vector> g_u(grad.data() + static_cast<Index>(m) * d + m, spec.num_classes);
  g_m.noalias() += g_z * x.transpose();
  g_c += g_z;
  g_u += g_logits.colwise().sum().transpose();
}

void backprop_mlp(const ModelSpec& spec, const Vector& theta, const Vector& x, const Vector& z,
                  const Matrix& g_logits, Vector& grad) {
  const auto blocks = mlp_blocks(spec, theta);
  const int h = spec.latent_size();
  const int d = spec.pixels();
  const int num_classes = spec.num_classes;
  Matrix g_t = g_logits.transpose();
  Eigen::Map<const Vector> g_flat(g_t.data(), g_t.size());

  Index off = 0;
  Eigen::Map<Matrix> g_w1(grad.data(), h, d);
  off += static_cast<Index>(h) * d;
  Eigen::Map<Vector> g_b1(grad.data() + off, h);
  off += h;
  Eigen::Map<Matrix> g_w2(grad.data() + off, static_cast<Index>(d) * num_classes, h);
  off += static_cast<Index>(d) * num_classes * h;
  Eigen::Map<Vector> g_b2(grad.data() + off, static_cast<Index>(d) * num_classes);

  g_w2.noalias() += g_flat * z.transpose();
  g_b2 += g_flat;
  Vector g_z = blocks.w2.transpose() * g_flat;
  Vector g_pre = g_z.cwiseProduct((1.0 - z.array().square()).matrix());
  g_w1.noalias() += g_pre * x.transpose();
  g_b1 += g_pre;
}

// Encoder-only backprop used by the consistency gradient.
void backprop_encoder(const Model& model, const Vector& x, const Vector& z,
                      const Vector& g_z, Vector& grad) {
  const ModelSpec& spec = model.spec;
  const int m = spec.latent_size();
  const int d = spec.pixels();
  if (spec.family == Family::kConvexLinear) {
    Eigen::Map<Matrix> g_m(grad.data(), m, d);
    Eigen::Map<Vector> g_c(grad.data() + static_cast<Index>(m) * d, m);
    g_m.noalias() += g_z * x.transpose();
    g_c += g_z;
  } else {
    Eigen::Map<Matrix> g_w1(grad.data(), m, d);
    Eigen::Map<Vector> g_b1(grad.data() + static_cast<Index>(m) * d, m);
    Vector g_pre = g_z.cwiseProduct((1.0 - z.array().square()).matrix());
    g_w1.noalias() += g_pre * x.transpose();
    g_b1 += g_pre;
  }
}

// d(ce)/d(logits) = (probs - onehot)/d per row.
Matrix ce_logit_grad(const Matrix& probs, const IntVector& y) {
  const Index d = probs.rows();
  Matrix g = probs / static_cast<Scalar>(d);
  for (Index j = 0; j < d; ++j) g(j, y(j)) -= 1.0 / static_cast<Scalar>(d);
  return g;
}

// d(dice)/d(logits) via d(dice)/d(probs) and the row softmax Jacobian.
Matrix dice_logit_grad(const Matrix& probs, const IntVector& y, Scalar epsilon) {
  const Index d = probs.rows();
  const Index num_classes = probs.cols();
  Matrix g_probs(d, num_classes);
  for (Index k = 0; k < num_classes; ++k) {
    Vector indicator(d);
    for (Index j = 0; j < d; ++j) indicator(j) = (static_cast<Index>(y(j)) == k) ? 1.0 : 0.0;
    const Scalar numer = 2.0 * probs.col(k).dot(indicator) + epsilon;
    const Scalar denom = probs.col(k).sum() + indicator.sum() + epsilon;
    // loss contribution is -(1/K) * numer/denom
    g_probs.col(k) =
        -(2.0 * indicator * denom - Vector::Constant(d, numer)) / (denom * denom * num_classes);
  }
  Matrix g_logits(d, num_classes);
  for (Index j = 0; j < d; ++j) {
    const auto p = probs.row(j);
    const Scalar inner = g_probs.row(j).dot(p);
    g_logits.row(j) = p.cwiseProduct(g_probs.row(j) - Eigen::RowVectorXd::Constant(num_classes, inner));
  }
  return g_logits;
}

}  // namespace

void validate(const ModelSpec& spec) {
  if (spec.height < 1 || spec.width < 1) throw DimensionError("model: grid dims must be >= 1");
  if (spec.num_classes < 2) throw DimensionError("model: num_classes must be >= 2");
  if (spec.latent_dim < 1) throw DimensionError("model: latent_dim must be >= 1");
  if (spec.hidden_dim < 0) throw DimensionError("model: hidden_dim must be >= 0");
}

Index param_dim(const ModelSpec& spec) {
  const Index d = spec.pixels();
  const Index m = spec.latent_size();
  const Index dk = d * spec.num_classes;
  if (spec.family == Family::kConvexLinear) return m * d + m + spec.num_classes;
  return m * d + m + dk * m + dk;
}

ConvexLinearBlocks convex_linear_blocks(const ModelSpec& spec, const Vector& theta) {
  const Index m = spec.latent_size();
  const Index d = spec.pixels();
  return {Eigen::Map<const Matrix>(theta.data(), m, d),
          Eigen::Map<const Vector>(theta.data() + m * d, m),
          Eigen::Map<const Vector>(theta.data() + m * d + m, spec.num_classes)};
}

MlpBlocks mlp_blocks(const ModelSpec& spec, const Vector& theta) {
  const Index h = spec.latent_size();
  const Index d = spec.pixels();
  const Index dk = d * spec.num_classes;
  Index off = 0;
  Eigen::Map<const Matrix> w1(theta.data() + off, h, d);
  off += h * d;
  Eigen::Map<const Vector> b1(theta.data() + off, h);
  off += h;
  Eigen::Map<const Matrix> w2(theta.data() + off, dk, h);
  off += dk * h;
  Eigen::Map<const Vector> b2(theta.data() + off, dk);
  return {w1, b1, w2, b2};
}

Model make_model(const ModelSpec& spec) {
  validate(spec);
  Model model{spec, {}};
  if (spec.family == Family::kConvexLinear) {
    const Index m = spec.latent_size();
    const Index dk = static_cast<Index>(spec.pixels()) * spec.num_classes;
    Rng rng(spec.decoder_seed);
    model.decoder.resize(dk, m);
    const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(m));
    for (Index i = 0; i < dk; ++i) {
      for (Index j = 0; j < m; ++j) model.decoder(i, j) = normal01(rng) * scale;
    }
  }
  return model;
}

Model make_model_with_decoder(const ModelSpec& spec, Matrix decoder) {
  validate(spec);
  const Index dk = static_cast<Index>(spec.pixels()) * spec.num_classes;
  if (decoder.rows() != dk || decoder.cols() != spec.latent_size()) {
    throw DimensionError("decoder must be (d*K) x latent_size");
  }
  return {spec, std::move(decoder)};
}

Prediction forward(const Model& model, const Vector& theta, const Vector& x) {
  check_theta(model.spec, theta);
  check_x(model.spec, x);
  Prediction pred;
  if (model.spec.family == Family::kConvexLinear) {
    const auto blocks = convex_linear_blocks(model.spec, theta);
    pred.latent = blocks.encoder * x + blocks.bias;
    pred.probs = softmax_rows(logits_convex_linear(model, pred.latent, blocks.class_bias));
  } else {
    MlpForward f = mlp_forward(model.spec, theta, x);
    pred.latent = std::move(f.z);
    pred.probs = softmax_rows(f.logits);
  }
  return pred;
}

Vector encode(const Model& model, const Vector& theta, const Vector& x) {
  check_theta(model.spec, theta);
  check_x(model.spec, x);
  if (model.spec.family == Family::kConvexLinear) {
    const auto blocks = convex_linear_blocks(model.spec, theta);
    return blocks.encoder * x + blocks.bias;
  }
  const auto blocks = mlp_blocks(model.spec, theta);
  return (blocks.w1 * x + blocks.b1).array().tanh();
}

Scalar ce_value(const Model& model, const Vector& theta, const LabeledImage& sample) {
  return losses::cross_entropy(forward(model, theta, sample.x).probs, sample.y);
}

Scalar ce_value_grad(const Model& model, const Vector& theta, const LabeledImage& sample,
                     Vector& grad) {
  check_theta(model.spec, theta);
  check_x(model.spec, sample.x);
  grad.setZero(param_dim(model.spec));
  if (model.spec.family == Family::kConvexLinear) {
    const auto blocks = convex_linear_blocks(model.spec, theta);
    Vector z = blocks.encoder * sample.x + blocks.bias;
    Matrix probs = softmax_rows(logits_convex_linear(model, z, blocks.class_bias));
    const Scalar value = losses::cross_entropy(probs, sample.y);
    backprop_convex_linear(model, sample.x, ce_logit_grad(probs, sample.y), grad);
    return value;
  }
  MlpForward f = mlp_forward(model.spec, theta, sample.x);
  Matrix probs = softmax_rows(f.logits);
  const Scalar value = losses::cross_entropy(probs, sample.y);
  backprop_mlp(model.spec, theta, sample.x, f.z, ce_logit_grad(probs, sample.y), grad);
  return value;
}

Vector grad_ce(const Model& model, const Vector& theta, const LabeledImage& sample) {
  Vector grad;
  ce_value_grad(model, theta, sample, grad);
  return grad;
}

Scalar ac_value(const Model& model, const Vector& theta, const Vector& x,
                const aug::AugmentationOp& a1, const aug::AugmentationOp& a2, Scalar lambda_ac,
                LatentMetric metric) {
  const Vector z1 = encode(model, theta, aug::apply(a1, x));
  const Vector z2 = encode(model, theta, aug::apply(a2, x));
  return losses::consistency(z1, z2, lambda_ac, metric);
}

Scalar ac_value_grad(const Model& model, const Vector& theta, const Vector& x,
                     const aug::AugmentationOp& a1, const aug::AugmentationOp& a2,
                     Scalar lambda_ac, LatentMetric metric, Vector& grad) {
  check_theta(model.spec, theta);
  check_x(model.spec, x);
  if (lambda_ac < 0.0) throw DimensionError("grad_ac: lambda_ac must be >= 0");
  grad.setZero(param_dim(model.spec));
  const Vector x1 = aug::apply(a1, x);
  const Vector x2 = aug::apply(a2, x);
  const Vector z1 = encode(model, theta, x1);
  const Vector z2 = encode(model, theta, x2);
  const Vector diff = z1 - z2;
  const Scalar dist = diff.norm();
  const Scalar value = metric == LatentMetric::kSquaredEuclidean ? lambda_ac * diff.squaredNorm()
                                                                 : lambda_ac * dist;
  Vector g_z1;
  if (metric == LatentMetric::kSquaredEuclidean) {
    g_z1 = 2.0 * lambda_ac * diff;
  } else if (dist > 0.0) {
    g_z1 = (lambda_ac / dist) * diff;
  } else {
    return value;  // zero subgradient at coincident latents
  }
  backprop_encoder(model, x1, z1, g_z1, grad);
  backprop_encoder(model, x2, z2, (-g_z1).eval(), grad);
  return value;
}

Vector grad_ac(const Model& model, const Vector& theta, const Vector& x,
               const aug::AugmentationOp& a1, const aug::AugmentationOp& a2, Scalar lambda_ac,
               LatentMetric metric) {
  Vector grad;
  ac_value_grad(model, theta, x, a1, a2, lambda_ac, metric, grad);
  return grad;
}

Scalar dice_value(const Model& model, const Vector& theta, const LabeledImage& sample,
                  Scalar epsilon) {
  return losses::dice_loss(forward(model, theta, sample.x).probs, sample.y, epsilon);
}

Scalar dice_value_grad(const Model& model, const Vector& theta, const LabeledImage& sample,
                       Scalar epsilon, Vector& grad) {
  if (!(epsilon > 0.0)) throw DimensionError("grad_dice: epsilon must be > 0");
  check_theta(model.spec, theta);
  check_x(model.spec, sample.x);
  grad.setZero(param_dim(model.spec));
  if (model.spec.family == Family::kConvexLinear) {
    const auto blocks = convex_linear_blocks(model.spec, theta);
    Vector z = blocks.encoder * sample.x + blocks.bias;
    Matrix probs = softmax_rows(logits_convex_linear(model, z, blocks.class_bias));
    const Scalar value = losses::dice_loss(probs, sample.y, epsilon);
    backprop_convex_linear(model, sample.x, dice_logit_grad(probs, sample.y, epsilon), grad);
    return value;
  }
  MlpForward f = mlp_forward(model.spec, theta, sample.x);
  Matrix probs = softmax_rows(f.logits);
  const Scalar value = losses::dice_loss(probs, sample.y, epsilon);
  backprop_mlp(model.spec, theta, sample.x, f.z, dice_logit_grad(probs, sample.y, epsilon), grad);
  return value;
}

Vector grad_dice(const Model& model, const Vector& theta, const LabeledImage& sample,
                 Scalar epsilon) {
  Vector grad;
  dice_value_grad(model, theta, sample, epsilon, grad);
  return grad;
}

Scalar probe_value(const Model& model, const Vector& theta, const LossProbe& probe) {
  switch (probe.kind) {
    case LossProbe::Kind::kCe:
      return ce_value(model, theta, *probe.sample);
    case LossProbe::Kind::kAc:
      return ac_value(model, theta, *probe.x, *probe.a1, *probe.a2, probe.lambda_ac, probe.metric);
    default:
      return dice_value(model, theta, *probe.sample, probe.dice_epsilon);
  }
}

Vector probe_grad(const Model& model, const Vector& theta, const LossProbe& probe) {
  switch (probe.kind) {
    case LossProbe::Kind::kCe:
      return grad_ce(model, theta, *probe.sample);
    case LossProbe::Kind::kAc:
      return grad_ac(model, theta, *probe.x, *probe.a1, *probe.a2, probe.lambda_ac, probe.metric);
    default:
      return grad_dice(model, theta, *probe.sample, probe.dice_epsilon);
  }
}

Scalar finite_diff_check(const Model& model, const Vector& theta, const LossProbe& probe,
                         Scalar step, Index max_coords, std::uint64_t coord_seed) {
  if (!(step > 0.0)) throw DimensionError("finite_diff_check: step must be > 0");
  const Vector analytic = probe_grad(model, theta, probe);
  std::vector<Index> coords;
  if (max_coords > 0 && max_coords < theta.size()) {
    Rng rng(coord_seed);
    coords.reserve(max_coords);
    for (Index i = 0; i < max_coords; ++i) {
      coords.push_back(static_cast<Index>(uniform_index(rng, theta.size())));
    }
  } else {
    coords.resize(theta.size());
    for (Index i = 0; i < theta.size(); ++i) coords[i] = i;
  }
  // Central differences cannot resolve derivative components below the
  // rounding noise of the loss itself, ~eps |f| / step; discrepancies under
  // that floor (x32 safety) are measurement noise, not gradient errors.
  const Scalar f0 = probe_value(model, theta, probe);
  const Scalar noise_floor =
      32.0 * std::numeric_limits<Scalar>::epsilon() * std::max(1.0, std::abs(f0)) / step;

  Scalar max_rel = 0.0;
  Vector probe_theta = theta;
  for (const Index i : coords) {
    probe_theta(i) = theta(i) + step;
    const Scalar f_plus = probe_value(model, probe_theta, probe);
    probe_theta(i) = theta(i) - step;
    const Scalar f_minus = probe_value(model, probe_theta, probe);
    probe_theta(i) = theta(i);
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      throw NumericError("finite_diff_check: non-finite loss at coordinate " + std::to_string(i));
    }
    const Scalar numeric = (f_plus - f_minus) / (2.0 * step);
    const Scalar abs_err = std::abs(analytic(i) - numeric);
    if (abs_err <= noise_floor) continue;
    const Scalar denom = std::max({std::abs(analytic(i)), std::abs(numeric), 1e-12});
    max_rel = std::max(max_rel, abs_err / denom);
  }
  return max_rel;
}

}  // namespace adawac::model
