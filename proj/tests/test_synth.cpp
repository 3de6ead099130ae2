#include <doctest.h>

#include <set>

#include "adawac/analysis.hpp"
#include "adawac/synth.hpp"
#include "test_helpers.hpp"

using namespace adawac;

namespace {

synth::MixtureSpec planted_spec() {
  synth::MixtureSpec spec;
  spec.track = synth::Track::kPlanted;
  spec.xi = 0.5;
  spec.num_volumes = 4;
  spec.slices_per_volume = 10;
  spec.height = 6;
  spec.width = 6;
  spec.num_classes = 3;
  spec.sparsity_level = 0.0;
  spec.margin_boost = 2.0;
  spec.seed = 11;
  return spec;
}

model::ModelSpec planted_model() {
  model::ModelSpec m;
  m.family = model::Family::kConvexLinear;
  m.height = 6;
  m.width = 6;
  m.num_classes = 3;
  m.latent_dim = 6;
  m.decoder_seed = 5;
  return m;
}

}  // namespace

TEST_CASE("xi pins the tag population at the extremes") {
  auto spec = planted_spec();
  spec.xi = 0.0;
  auto ds = synth::generate(spec, planted_model());
  for (const Sample& s : ds.samples) CHECK(s.tag == SubpopTag::kSparse);
  spec.xi = 1.0;
  ds = synth::generate(spec, planted_model());
  for (const Sample& s : ds.samples) CHECK(s.tag == SubpopTag::kDense);
  CHECK(ds.theta_star.has_value());
  CHECK(std::abs(ds.theta_star->norm() - spec.margin_boost) < 1e-9);
}

TEST_CASE("generation is deterministic per spec and seed") {
  const auto spec = planted_spec();
  const auto a = synth::generate(spec, planted_model());
  const auto b = synth::generate(spec, planted_model());
  CHECK(synth::to_json(a) == synth::to_json(b));
  auto other = spec;
  other.seed = 12;
  CHECK(synth::to_json(a) != synth::to_json(synth::generate(other, planted_model())));
}

TEST_CASE("sparse and dense image sets share the marginal (two-sample z)") {
  for (const auto track : {synth::Track::kPlanted, synth::Track::kGeometric}) {
    auto spec = planted_spec();
    spec.track = track;
    spec.iid_tags = true;
    spec.num_volumes = 50;
    spec.slices_per_volume = 44;  // ~1100 per group
    spec.noise_sigma = 0.15;
    const auto ds = track == synth::Track::kPlanted ? synth::generate(spec, planted_model())
                                                    : synth::generate(spec);
    std::vector<double> sparse_means, dense_means;
    for (const Sample& s : ds.samples) {
      (s.tag == SubpopTag::kDense ? dense_means : sparse_means).push_back(s.data.x.mean());
    }
    REQUIRE(sparse_means.size() > 300);
    REQUIRE(dense_means.size() > 300);
    auto moments = [](const std::vector<double>& v) {
      double mean = 0.0;
      for (const double x : v) mean += x;
      mean /= v.size();
      double var = 0.0;
      for (const double x : v) var += (x - mean) * (x - mean);
      var /= (v.size() - 1);
      return std::pair{mean, var};
    };
    const auto [m0, v0] = moments(sparse_means);
    const auto [m1, v1] = moments(dense_means);
    const double z = std::abs(m0 - m1) /
                     std::sqrt(v0 / sparse_means.size() + v1 / dense_means.size());
    CHECK(z < 3.0);
  }
}

TEST_CASE("per-slice dense profile is a symmetric bump with mean xi") {
  auto spec = planted_spec();
  for (const double xi : {0.0, 0.3, 0.5, 0.9, 1.0}) {
    spec.xi = xi;
    const Vector profile = synth::sparse_dense_layout(spec);
    REQUIRE(profile.size() == spec.slices_per_volume);
    CHECK(std::abs(profile.mean() - xi) < 1e-12);
    for (Index s = 0; s < profile.size(); ++s) {
      CHECK(profile(s) >= 0.0);
      CHECK(profile(s) <= 1.0);
      CHECK(profile(s) == doctest::Approx(profile(profile.size() - 1 - s)).epsilon(1e-12));
    }
    // ends sparse-heavier than the middle (strict when the bump is active)
    if (xi > 0.0 && xi < 1.0) CHECK(profile(0) < profile(profile.size() / 2));
  }
  spec.slices_per_volume = 1;
  spec.xi = 0.37;
  const Vector single = synth::sparse_dense_layout(spec);
  REQUIRE(single.size() == 1);
  CHECK(single(0) == doctest::Approx(0.37).epsilon(1e-15));
}

TEST_CASE("subset selectors implement the sample-efficiency protocols") {
  const auto ds = synth::generate(planted_spec(), planted_model());

  const auto full = synth::subset(ds, synth::SubsetMode::kFull);
  CHECK(full.size() == ds.size());

  const auto half_slice = synth::subset(ds, synth::SubsetMode::kHalfSlice);
  CHECK(half_slice.size() == ds.size() / 2);
  for (const Sample& s : half_slice.samples) CHECK(s.slice_index % 2 == 0);

  const auto half_vol = synth::subset(ds, synth::SubsetMode::kHalfVol, 3);
  std::set<int> volumes;
  for (const Sample& s : half_vol.samples) volumes.insert(s.volume_id);
  CHECK(volumes.size() == 2);
  CHECK(half_vol.size() == ds.size() / 2);
  const auto half_vol_again = synth::subset(ds, synth::SubsetMode::kHalfVol, 3);
  CHECK(synth::to_json(half_vol) == synth::to_json(half_vol_again));

  const auto half_sparse = synth::subset(ds, synth::SubsetMode::kHalfSparse);
  CHECK(half_sparse.size() == ds.size() / 2);
  CHECK(half_sparse.dense_fraction() < ds.dense_fraction());
}

TEST_CASE("an empty subset selection is rejected") {
  auto ds = synth::generate(planted_spec(), planted_model());
  ds.samples.resize(1);
  ds.samples[0].slice_index = 1;
  CHECK_THROWS_AS((void)synth::subset(ds, synth::SubsetMode::kHalfSlice), DimensionError);
}

TEST_CASE("json round trip is bit-exact") {
  const auto ds = synth::generate(planted_spec(), planted_model());
  const auto back = synth::from_json(synth::to_json(ds));
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& a = ds.samples[i];
    const auto& b = back.samples[i];
    CHECK(a.volume_id == b.volume_id);
    CHECK(a.slice_index == b.slice_index);
    CHECK(a.tag == b.tag);
    for (Index j = 0; j < a.data.x.size(); ++j) CHECK(a.data.x(j) == b.data.x(j));
    for (Index j = 0; j < a.data.y.size(); ++j) CHECK(a.data.y(j) == b.data.y(j));
  }
  REQUIRE(back.theta_star.has_value());
  for (Index j = 0; j < ds.theta_star->size(); ++j) {
    CHECK((*ds.theta_star)(j) == (*back.theta_star)(j));
  }
  CHECK(synth::to_json(back) == synth::to_json(ds));
}

TEST_CASE("fully dense planted data refits to near-zero cross entropy") {
  auto spec = planted_spec();
  spec.xi = 1.0;
  spec.margin_boost = 2.0;
  const auto model_spec = planted_model();
  const auto ds = synth::generate(spec, model_spec);
  const auto m = model::make_model(model_spec);
  const auto data = opt::training_view(ds.samples);
  const auto pairs = opt::frozen_pairs(1, static_cast<Index>(data.size()), 6, 6);
  const opt::WacProblem problem{m, data, pairs, 0.0, LatentMetric::kEuclidean};

  analysis::OracleConfig oracle;
  oracle.max_iters = 3000;
  oracle.grad_tol = 1e-7;
  const auto fit = analysis::min_over_theta(problem, Vector::Ones(40), oracle);
  CHECK(fit.value < 0.25);
}

TEST_CASE("geometric track produces in-range labels with foreground present") {
  auto spec = planted_spec();
  spec.track = synth::Track::kGeometric;
  spec.xi = 1.0;
  spec.noise_sigma = 0.1;
  const auto ds = synth::generate(spec);
  CHECK(!ds.theta_star.has_value());
  int foreground = 0;
  for (const Sample& s : ds.samples) {
    for (Index j = 0; j < s.data.y.size(); ++j) {
      CHECK(s.data.y(j) >= 0);
      CHECK(s.data.y(j) < spec.num_classes);
      foreground += s.data.y(j) != 0;
    }
  }
  CHECK(foreground > 0);
}

TEST_CASE("planted track validates the model spec") {
  auto spec = planted_spec();
  auto bad = planted_model();
  bad.family = model::Family::kMlp;
  CHECK_THROWS_AS((void)synth::generate(spec, bad), DimensionError);
  auto mismatched = planted_model();
  mismatched.height = 4;
  CHECK_THROWS_AS((void)synth::generate(spec, mismatched), DimensionError);
  CHECK_THROWS_AS((void)synth::generate(spec), DimensionError);
}
