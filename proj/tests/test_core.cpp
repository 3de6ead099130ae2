#include <doctest.h>

#include "adawac/augment.hpp"
#include "adawac/losses.hpp"
#include "adawac/model.hpp"
#include "test_helpers.hpp"

using namespace adawac;
using testutil::fd_rel_error;
using testutil::random_sample;
using testutil::random_theta;

namespace {

model::ModelSpec small_spec(model::Family family) {
  model::ModelSpec spec;
  spec.family = family;
  spec.height = 6;
  spec.width = 6;
  spec.num_classes = 3;
  spec.latent_dim = 5;
  spec.decoder_seed = 17;
  return spec;
}

}  // namespace

// ---------------------------------------------------------------------------
// losses

TEST_CASE("cross entropy of a perfect prediction is zero") {
  Matrix probs(2, 2);
  probs << 1.0, 0.0, 0.0, 1.0;
  IntVector y(2);
  y << 0, 1;
  CHECK(losses::cross_entropy(probs, y) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy matches a hand evaluation") {
  Matrix probs(2, 2);
  probs << 0.5, 0.5, 0.25, 0.75;
  IntVector y(2);
  y << 0, 1;
  const double expected = -(std::log(0.5) + std::log(0.75)) / 2.0;  // ~0.49042
  CHECK(losses::cross_entropy(probs, y) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(losses::cross_entropy(probs, y) == doctest::Approx(0.49042).epsilon(1e-4));
}

TEST_CASE("cross entropy of uniform probabilities is log K") {
  Rng rng(1);
  for (const int k : {2, 3, 5}) {
    Matrix probs = Matrix::Constant(7, k, 1.0 / k);
    IntVector y(7);
    for (Index j = 0; j < 7; ++j) y(j) = static_cast<int>(uniform_index(rng, k));
    CHECK(losses::cross_entropy(probs, y) == doctest::Approx(std::log(k)).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Matrix probs = Matrix::Constant(2, 2, 0.5);
  IntVector y(2);
  y << 0, 2;
  CHECK_THROWS_AS((void)losses::cross_entropy(probs, y), DimensionError);
  y << -1, 0;
  CHECK_THROWS_AS((void)losses::cross_entropy(probs, y), DimensionError);
}

TEST_CASE("consistency examples and symmetry") {
  Vector z1(2), z2(2);
  z1 << 1.0, 2.0;
  z2 << 1.0, 2.0;
  CHECK(losses::consistency(z1, z2, 3.0, LatentMetric::kEuclidean) == 0.0);
  z2 << -2.0, -2.0;  // z1 - z2 = (3, 4)
  CHECK(losses::consistency(z1, z2, 2.0, LatentMetric::kEuclidean) ==
        doctest::Approx(10.0).epsilon(1e-14));
  CHECK(losses::consistency(z1, z2, 2.0, LatentMetric::kSquaredEuclidean) ==
        doctest::Approx(50.0).epsilon(1e-14));
  CHECK(losses::consistency(z1, z2, 0.0, LatentMetric::kEuclidean) == 0.0);

  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    Vector a = random_theta(rng, 6, 1.0);
    Vector b = random_theta(rng, 6, 1.0);
    for (const auto metric : {LatentMetric::kEuclidean, LatentMetric::kSquaredEuclidean}) {
      CHECK(losses::consistency(a, b, 1.7, metric) == losses::consistency(b, a, 1.7, metric));
      CHECK(losses::consistency(a, b, 1.7, metric) >= 0.0);
    }
  }
  Vector bad(3);
  CHECK_THROWS_AS((void)losses::consistency(z1, bad, 1.0, LatentMetric::kEuclidean),
                  DimensionError);
}

TEST_CASE("dice loss hand example at epsilon zero") {
  Matrix probs(2, 2);
  probs << 1.0, 0.0, 1.0, 0.0;
  IntVector y(2);
  y << 0, 1;
  // class 0: p=(1,1), q=(1,0): 2/(2+1); class 1: p=(0,0), q=(0,1): 0/1.
  CHECK(losses::dice_loss(probs, y, 0.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("dice loss limits") {
  Matrix probs(3, 2);
  probs << 1, 0, 0, 1, 1, 0;
  IntVector y(3);
  y << 0, 1, 0;
  CHECK(losses::dice_loss(probs, y, 1e-5) == doctest::Approx(0.0).epsilon(1e-4));
  IntVector flipped(3);
  flipped << 1, 0, 1;
  CHECK(losses::dice_loss(probs, flipped, 1e-5) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("dice loss stays in [0,1] on random inputs") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Index d = 4 + static_cast<Index>(uniform_index(rng, 8));
    const Index k = 2 + static_cast<Index>(uniform_index(rng, 3));
    Matrix probs = testutil::random_probs(rng, d, k);
    IntVector y(d);
    for (Index j = 0; j < d; ++j) y(j) = static_cast<int>(uniform_index(rng, k));
    const double loss = losses::dice_loss(probs, y, 1e-5);
    CHECK(loss >= 0.0);
    CHECK(loss <= 1.0);
  }
}

TEST_CASE("weighted sample objective examples and affinity") {
  const LossPair pair{2.0, 4.0};
  CHECK(losses::wac_sample_objective(1.0, pair) == 2.0);
  CHECK(losses::wac_sample_objective(0.0, pair) == 4.0);
  CHECK(losses::wac_sample_objective(0.5, pair) == 3.0);
  CHECK_THROWS_AS((void)losses::wac_sample_objective(1.5, pair), DimensionError);

  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const LossPair p{uniform01(rng) * 3.0, uniform01(rng) * 3.0};
    const double b1 = uniform01(rng), b2 = uniform01(rng), w = uniform01(rng);
    const double lhs = losses::wac_sample_objective(w * b1 + (1 - w) * b2, p);
    const double rhs =
        w * losses::wac_sample_objective(b1, p) + (1 - w) * losses::wac_sample_objective(b2, p);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
  }
}

TEST_CASE("plain objective equals twice the half-weighted objective") {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const double ce = uniform01(rng) * 5.0;
    const double ac = uniform01(rng) * 5.0;
    // Exact: scaling by powers of two commutes with rounding.
    CHECK(2.0 * losses::wac_sample_objective(0.5, {ce, ac}) == ce + ac);
  }
}

// ---------------------------------------------------------------------------
// model forward / encode

TEST_CASE("zero parameters give uniform probabilities in both families") {
  for (const auto family : {model::Family::kConvexLinear, model::Family::kMlp}) {
    const auto spec = small_spec(family);
    const auto m = model::make_model(spec);
    Rng rng(6);
    const Vector theta = Vector::Zero(model::param_dim(spec));
    const auto pred = model::forward(m, theta, random_sample(rng, spec).x);
    CHECK((pred.probs.array() - 1.0 / spec.num_classes).abs().maxCoeff() < 1e-12);
    CHECK(pred.latent.norm() == 0.0);
  }
}

TEST_CASE("softmax of logits (0, ln 3) is (0.25, 0.75)") {
  model::ModelSpec spec;
  spec.family = model::Family::kConvexLinear;
  spec.height = 1;
  spec.width = 1;
  spec.num_classes = 2;
  spec.latent_dim = 1;
  Matrix decoder(2, 1);
  decoder << 0.0, std::log(3.0);
  const auto m = model::make_model_with_decoder(spec, decoder);
  Vector theta(4);
  theta << 1.0, 0.0, 0.0, 0.0;  // encoder 1x1 = [1], biases 0
  Vector x(1);
  x << 1.0;
  const auto pred = model::forward(m, theta, x);
  CHECK(pred.probs(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(pred.probs(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("mlp with zero weights gives uniform probs and latent tanh(b1)") {
  auto spec = small_spec(model::Family::kMlp);
  const auto m = model::make_model(spec);
  Vector theta = Vector::Zero(model::param_dim(spec));
  // b1 block sits after W1.
  const Index w1 = static_cast<Index>(spec.latent_size()) * spec.pixels();
  for (Index i = 0; i < spec.latent_size(); ++i) theta(w1 + i) = 0.3 * (i + 1);
  Rng rng(7);
  const auto pred = model::forward(m, theta, random_sample(rng, spec).x);
  CHECK((pred.probs.array() - 1.0 / spec.num_classes).abs().maxCoeff() < 1e-12);
  for (Index i = 0; i < spec.latent_size(); ++i) {
    CHECK(pred.latent(i) == doctest::Approx(std::tanh(0.3 * (i + 1))).epsilon(1e-14));
  }
}

TEST_CASE("identity encoder reproduces the input") {
  model::ModelSpec spec;
  spec.family = model::Family::kConvexLinear;
  spec.height = 2;
  spec.width = 2;
  spec.num_classes = 2;
  spec.latent_dim = 4;
  const auto m = model::make_model(spec);
  Vector theta = Vector::Zero(model::param_dim(spec));
  Eigen::Map<Matrix>(theta.data(), 4, 4).setIdentity();
  Rng rng(8);
  const Vector x = random_theta(rng, 4, 1.0);
  CHECK((model::encode(m, theta, x) - x).norm() == 0.0);
  CHECK(model::encode(m, Vector::Zero(theta.size()), x).norm() == 0.0);
}

TEST_CASE("encode is bit-identical to the forward latent") {
  Rng rng(9);
  for (const auto family : {model::Family::kConvexLinear, model::Family::kMlp}) {
    const auto spec = small_spec(family);
    const auto m = model::make_model(spec);
    for (int t = 0; t < 10; ++t) {
      const Vector theta = random_theta(rng, model::param_dim(spec));
      const Vector x = random_sample(rng, spec).x;
      const Vector z = model::encode(m, theta, x);
      const auto pred = model::forward(m, theta, x);
      REQUIRE(z.size() == pred.latent.size());
      for (Index i = 0; i < z.size(); ++i) CHECK(z(i) == pred.latent(i));
    }
  }
}

TEST_CASE("forward rejects mismatched input length with a shape message") {
  const auto spec = small_spec(model::Family::kConvexLinear);
  const auto m = model::make_model(spec);
  const Vector theta = Vector::Zero(model::param_dim(spec));
  try {
    (void)model::forward(m, theta, Vector::Zero(5));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    CHECK(what.find("5") != std::string::npos);
    CHECK(what.find("36") != std::string::npos);
  }
}

TEST_CASE("probabilities are row-stochastic and clamped at any scale") {
  Rng rng(10);
  for (const auto family : {model::Family::kConvexLinear, model::Family::kMlp}) {
    const auto spec = small_spec(family);
    const auto m = model::make_model(spec);
    for (const double scale : {0.1, 1.0, 50.0, 2000.0}) {
      const Vector theta = random_theta(rng, model::param_dim(spec), scale);
      const auto pred = model::forward(m, theta, random_sample(rng, spec).x);
      for (Index j = 0; j < pred.probs.rows(); ++j) {
        CHECK(std::abs(pred.probs.row(j).sum() - 1.0) < 1e-9);
        CHECK(pred.probs.row(j).minCoeff() >= kProbClamp);
        CHECK(pred.probs.row(j).maxCoeff() <= 1.0);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// model gradients vs the finite-difference oracle

TEST_CASE("analytic gradients match finite differences on 20 random pairs") {
  for (const auto family : {model::Family::kConvexLinear, model::Family::kMlp}) {
    const auto spec = small_spec(family);
    const auto m = model::make_model(spec);
    Rng rng(family == model::Family::kConvexLinear ? 11 : 12);
    for (int pair = 0; pair < 20; ++pair) {
      const Vector theta = random_theta(rng, model::param_dim(spec));
      const LabeledImage sample = random_sample(rng, spec);
      const auto a1 = aug::make_op(static_cast<int>(uniform_index(rng, 4)), false, 6, 6);
      const auto a2 = aug::make_op(static_cast<int>(uniform_index(rng, 4)), true, 6, 6);

      const double ce_err = fd_rel_error(
          [&](const Vector& t) { return model::ce_value(m, t, sample); }, theta,
          model::grad_ce(m, theta, sample));
      CHECK(ce_err < 1e-4);

      const double ac_err = fd_rel_error(
          [&](const Vector& t) {
            return model::ac_value(m, t, sample.x, a1, a2, 0.7,
                                   LatentMetric::kSquaredEuclidean);
          },
          theta, model::grad_ac(m, theta, sample.x, a1, a2, 0.7,
                                LatentMetric::kSquaredEuclidean));
      CHECK(ac_err < 1e-4);

      const double dice_err = fd_rel_error(
          [&](const Vector& t) { return model::dice_value(m, t, sample, 1e-5); }, theta,
          model::grad_dice(m, theta, sample, 1e-5));
      CHECK(dice_err < 1e-4);
    }
  }
}

TEST_CASE("euclidean consistency gradient matches finite differences away from zero") {
  const auto spec = small_spec(model::Family::kConvexLinear);
  const auto m = model::make_model(spec);
  Rng rng(13);
  const auto a1 = aug::make_op(1, false, 6, 6);
  const auto a2 = aug::make_op(3, true, 6, 6);
  for (int t = 0; t < 10; ++t) {
    const Vector theta = random_theta(rng, model::param_dim(spec));
    const Vector x = random_sample(rng, spec).x;
    const double err = fd_rel_error(
        [&](const Vector& th) {
          return model::ac_value(m, th, x, a1, a2, 1.3, LatentMetric::kEuclidean);
        },
        theta, model::grad_ac(m, theta, x, a1, a2, 1.3, LatentMetric::kEuclidean));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("consistency gradient vanishes for identical augmentations and at zero") {
  const auto spec = small_spec(model::Family::kConvexLinear);
  const auto m = model::make_model(spec);
  Rng rng(14);
  const Vector theta = random_theta(rng, model::param_dim(spec));
  const Vector x = random_sample(rng, spec).x;
  const auto op = aug::make_op(2, true, 6, 6);
  CHECK(model::grad_ac(m, theta, x, op, op, 1.0, LatentMetric::kEuclidean).norm() == 0.0);
  const auto other = aug::make_op(1, false, 6, 6);
  CHECK(model::grad_ac(m, Vector::Zero(theta.size()), x, op, other, 1.0,
                       LatentMetric::kEuclidean)
            .norm() == 0.0);
}

TEST_CASE("cross entropy gradient vanishes at a saturated fit") {
  const auto fit = testutil::make_saturated_fit(15);
  CHECK(model::ce_value(fit.model, fit.theta, fit.sample) == 0.0);
  CHECK(model::grad_ce(fit.model, fit.theta, fit.sample).norm() < 1e-9);
}

TEST_CASE("dice gradient fades as the smoothing term dominates") {
  const auto spec = small_spec(model::Family::kConvexLinear);
  const auto m = model::make_model(spec);
  Rng rng(16);
  const Vector theta = random_theta(rng, model::param_dim(spec));
  const LabeledImage sample = random_sample(rng, spec);
  CHECK(model::grad_dice(m, theta, sample, 1e8).norm() < 1e-6);
  CHECK(model::dice_value(m, theta, sample, 1e8) < 1e-6);
}

TEST_CASE("finite_diff_check validates all loss kinds") {
  Rng rng(17);
  for (const auto family : {model::Family::kConvexLinear, model::Family::kMlp}) {
    const auto spec = small_spec(family);
    const auto m = model::make_model(spec);
    const Vector theta = random_theta(rng, model::param_dim(spec));
    const LabeledImage sample = random_sample(rng, spec);
    const auto a1 = aug::make_op(1, false, 6, 6);
    const auto a2 = aug::make_op(0, true, 6, 6);
    model::LossProbe probe;
    probe.sample = &sample;
    probe.x = &sample.x;
    probe.a1 = &a1;
    probe.a2 = &a2;
    for (const auto kind : {model::LossProbe::Kind::kCe, model::LossProbe::Kind::kAc,
                            model::LossProbe::Kind::kDice}) {
      probe.kind = kind;
      CHECK(model::finite_diff_check(m, theta, probe, 1e-6) < 1e-4);
    }
    probe.kind = model::LossProbe::Kind::kCe;
    CHECK_THROWS_AS((void)model::finite_diff_check(m, theta, probe, 0.0), DimensionError);
  }
}

TEST_CASE("convexity witness for the convex_linear family") {
  const auto spec = small_spec(model::Family::kConvexLinear);
  const auto m = model::make_model(spec);
  Rng rng(18);
  const auto a1 = aug::make_op(1, false, 6, 6);
  const auto a2 = aug::make_op(2, true, 6, 6);
  for (int trial = 0; trial < 30; ++trial) {
    const Vector t1 = random_theta(rng, model::param_dim(spec), 1.0);
    const Vector t2 = random_theta(rng, model::param_dim(spec), 1.0);
    const double w = uniform01(rng);
    const Vector mid = w * t1 + (1 - w) * t2;
    const LabeledImage sample = random_sample(rng, spec);

    const double ce_mid = model::ce_value(m, mid, sample);
    const double ce_interp =
        w * model::ce_value(m, t1, sample) + (1 - w) * model::ce_value(m, t2, sample);
    CHECK(ce_mid <= ce_interp + 1e-9);

    for (const auto metric : {LatentMetric::kEuclidean, LatentMetric::kSquaredEuclidean}) {
      const double ac_mid = model::ac_value(m, mid, sample.x, a1, a2, 1.0, metric);
      const double ac_interp = w * model::ac_value(m, t1, sample.x, a1, a2, 1.0, metric) +
                               (1 - w) * model::ac_value(m, t2, sample.x, a1, a2, 1.0, metric);
      CHECK(ac_mid <= ac_interp + 1e-9);
    }
  }
}

// ---------------------------------------------------------------------------
// augmentations

TEST_CASE("identity, double mirror, and full turn leave the image unchanged") {
  Rng rng(19);
  Vector x = random_theta(rng, 16, 1.0);
  const auto id = aug::identity_op(4, 4);
  CHECK((aug::apply(id, x) - x).norm() == 0.0);
  const auto mirror = aug::make_op(0, true, 4, 4);
  CHECK((aug::apply(mirror, aug::apply(mirror, x)) - x).norm() == 0.0);
  const auto quarter = aug::make_op(1, false, 4, 4);
  Vector turned = x;
  for (int i = 0; i < 4; ++i) turned = aug::apply(quarter, turned);
  CHECK((turned - x).norm() == 0.0);
}

TEST_CASE("augmentations preserve the pixel multiset and the norm") {
  Rng rng(20);
  const Vector x = random_theta(rng, 25, 1.0);
  for (int q = 0; q < 4; ++q) {
    for (const bool mir : {false, true}) {
      const Vector out = aug::apply(aug::make_op(q, mir, 5, 5), x);
      CHECK(out.norm() == x.norm());
      std::vector<double> a(x.data(), x.data() + x.size());
      std::vector<double> b(out.data(), out.data() + out.size());
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
    }
  }
}

TEST_CASE("composition obeys the group law on all 64 pairs") {
  Rng rng(21);
  const Vector x = random_theta(rng, 49, 1.0);
  for (int qa = 0; qa < 4; ++qa) {
    for (const bool ma : {false, true}) {
      for (int qb = 0; qb < 4; ++qb) {
        for (const bool mb : {false, true}) {
          const auto a = aug::make_op(qa, ma, 7, 7);
          const auto b = aug::make_op(qb, mb, 7, 7);
          const Vector lhs = aug::apply(a, aug::apply(b, x));
          const Vector rhs = aug::apply(aug::compose(a, b), x);
          CHECK((lhs - rhs).norm() == 0.0);
        }
      }
    }
  }
}

TEST_CASE("sampling is seeded-deterministic and near-uniform over the 8 ops") {
  Rng rng_a(22), rng_b(22);
  const auto pair_a = aug::sample_pair(rng_a, 4, 4);
  const auto pair_b = aug::sample_pair(rng_b, 4, 4);
  CHECK(pair_a.first.rotation_quarters == pair_b.first.rotation_quarters);
  CHECK(pair_a.first.mirrored == pair_b.first.mirrored);
  CHECK(pair_a.second.rotation_quarters == pair_b.second.rotation_quarters);
  CHECK(pair_a.second.mirrored == pair_b.second.mirrored);

  Rng rng(23);
  std::array<int, 8> counts{};
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto op = aug::sample_op(rng, 4, 4);
    counts[static_cast<std::size_t>(op.rotation_quarters) + (op.mirrored ? 4 : 0)]++;
  }
  for (const int c : counts) {
    CHECK(std::abs(c / static_cast<double>(draws) - 0.125) < 0.01);
  }
}

TEST_CASE("non-square grids only admit the four shape-preserving ops") {
  CHECK_THROWS_AS((void)aug::make_op(1, false, 2, 3), DimensionError);
  Rng rng(24);
  for (int i = 0; i < 10000; ++i) {
    const auto op = aug::sample_op(rng, 2, 3);
    CHECK(op.rotation_quarters % 2 == 0);
  }
  const Vector x = random_theta(rng, 6, 1.0);
  const auto op = aug::make_op(2, true, 2, 3);
  CHECK((aug::apply(op, aug::apply(op, x)) - x).norm() == 0.0);  // involution
}
