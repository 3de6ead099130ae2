#include "adawac/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace adawac::synth {
namespace {

using nlohmann::json;

// Geometric scene: K-1 elliptical structures on a noisy background. The
// scene (and hence the image) is drawn independently of the tag; labels are
// derived from the same scene.
struct Scene {
  Vector image;
  IntVector true_labels;
};

Scene draw_scene(const MixtureSpec& spec, Rng& rng) {
  const int h = spec.height;
  const int w = spec.width;
  Scene scene;
  scene.image = Vector::Zero(spec.pixels());
  scene.true_labels = IntVector::Zero(spec.pixels());
  for (int k = 1; k < spec.num_classes; ++k) {
    const Scalar cx = (0.25 + 0.5 * uniform01(rng)) * w;
    const Scalar cy = (0.25 + 0.5 * uniform01(rng)) * h;
    const Scalar rx = (0.15 + 0.2 * uniform01(rng)) * w;
    const Scalar ry = (0.15 + 0.2 * uniform01(rng)) * h;
    const Scalar intensity = 0.8 + 0.4 * uniform01(rng);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const Scalar dx = (c + 0.5 - cx) / rx;
        const Scalar dy = (r + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) {
          const Index p = static_cast<Index>(r) * w + c;
          scene.image(p) += intensity;
          scene.true_labels(p) = k;
        }
      }
    }
  }
  for (Index p = 0; p < scene.image.size(); ++p) scene.image(p) += spec.noise_sigma * normal01(rng);
  return scene;
}

IntVector planted_labels(const model::Model& planted, const Vector& theta_star, const Vector& x) {
  const model::Prediction pred = model::forward(planted, theta_star, x);
  IntVector y(pred.probs.rows());
  for (Index j = 0; j < pred.probs.rows(); ++j) {
    Index argmax = 0;
    pred.probs.row(j).maxCoeff(&argmax);
    y(j) = static_cast<int>(argmax);
  }
  return y;
}

IntVector thin_to_background(const IntVector& y, Scalar sparsity_level, Rng& rng) {
  IntVector out = IntVector::Zero(y.size());
  for (Index j = 0; j < y.size(); ++j) {
    if (bernoulli(rng, sparsity_level)) out(j) = y(j);
  }
  return out;
}

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vector vector_from_json(const json& arr) {
  Vector v(arr.size());
  Index i = 0;
  for (const auto& e : arr) v(i++) = e.get<double>();
  return v;
}

}  // namespace

void validate(const MixtureSpec& spec) {
  if (!(spec.xi >= 0.0 && spec.xi <= 1.0)) throw DimensionError("mixture: xi must be in [0,1]");
  if (!(spec.sparsity_level >= 0.0 && spec.sparsity_level <= 1.0)) {
    throw DimensionError("mixture: sparsity_level must be in [0,1]");
  }
  if (spec.num_volumes < 1 || spec.slices_per_volume < 1) {
    throw DimensionError("mixture: num_volumes and slices_per_volume must be >= 1");
  }
  if (spec.height < 1 || spec.width < 1) throw DimensionError("mixture: grid dims must be >= 1");
  if (spec.num_classes < 2) throw DimensionError("mixture: num_classes must be >= 2");
  if (spec.noise_sigma < 0.0) throw DimensionError("mixture: noise_sigma must be >= 0");
  if (spec.margin_boost < 0.0) throw DimensionError("mixture: margin_boost must be >= 0");
}

Scalar Dataset::dense_fraction() const {
  if (samples.empty()) return 0.0;
  const auto dense = std::count_if(samples.begin(), samples.end(), [](const Sample& s) {
    return s.tag == SubpopTag::kDense;
  });
  return static_cast<Scalar>(dense) / static_cast<Scalar>(samples.size());
}

Vector sparse_dense_layout(const MixtureSpec& spec) {
  const int n_slices = spec.slices_per_volume;
  Vector bump(n_slices);
  for (int s = 0; s < n_slices; ++s) {
    const Scalar t = (s + 0.5) / n_slices;
    const Scalar sine = std::sin(M_PI * t);
    bump(s) = sine * sine;
  }
  // profile = xi + amp * (bump - mean(bump)) keeps the mean at exactly xi for
  // any amp; amp is capped so every entry stays in [0, 1].
  const Scalar mean = bump.mean();
  Vector centered = bump.array() - mean;
  const Scalar hi = centered.maxCoeff();
  const Scalar lo = centered.minCoeff();
  Scalar amp = 1.0;
  if (hi > 0.0) amp = std::min(amp, (1.0 - spec.xi) / hi);
  if (lo < 0.0) amp = std::min(amp, spec.xi / (-lo));
  amp *= 0.95;
  return (spec.xi + (amp * centered).array()).matrix();
}

Dataset generate(const MixtureSpec& spec, const model::ModelSpec& planted_model) {
  validate(spec);
  Dataset dataset;
  dataset.spec = spec;
  dataset.samples.reserve(spec.size());

  // Independent streams so the image sequence is identical whatever the tags
  // and labels turn out to be (shared marginal, enforced structurally).
  Rng image_rng(spec.seed * 0x9e3779b97f4a7c15ull + 1);
  Rng tag_rng(spec.seed * 0x9e3779b97f4a7c15ull + 2);
  Rng label_rng(spec.seed * 0x9e3779b97f4a7c15ull + 3);

  std::optional<model::Model> planted;
  Vector theta_star;
  if (spec.track == Track::kPlanted) {
    model::ModelSpec ms = planted_model;
    if (ms.family != model::Family::kConvexLinear) {
      throw DimensionError("generate: planted track requires the convex_linear family");
    }
    if (ms.height != spec.height || ms.width != spec.width || ms.num_classes != spec.num_classes) {
      throw DimensionError("generate: planted model grid/classes must match the mixture spec");
    }
    planted = model::make_model(ms);
    Rng param_rng(spec.seed * 0x9e3779b97f4a7c15ull + 4);
    theta_star.resize(model::param_dim(ms));
    for (Index i = 0; i < theta_star.size(); ++i) theta_star(i) = normal01(param_rng);
    theta_star /= theta_star.norm();
    // Suppress the planted background logit so the dense conditional is
    // genuinely label-dense (foreground-rich labels).
    theta_star(static_cast<Index>(ms.latent_size()) * ms.pixels() + ms.latent_size()) -= 0.35;
    theta_star *= spec.margin_boost / theta_star.norm();
    dataset.theta_star = theta_star;
  }

  const Vector profile = sparse_dense_layout(spec);
  for (int v = 0; v < spec.num_volumes; ++v) {
    for (int s = 0; s < spec.slices_per_volume; ++s) {
      Sample sample;
      sample.volume_id = v;
      sample.slice_index = s;

      IntVector true_labels;
      if (spec.track == Track::kPlanted) {
        sample.data.x.resize(spec.pixels());
        for (Index p = 0; p < sample.data.x.size(); ++p) sample.data.x(p) = normal01(image_rng);
        true_labels = planted_labels(*planted, theta_star, sample.data.x);
      } else {
        Scene scene = draw_scene(spec, image_rng);
        sample.data.x = std::move(scene.image);
        true_labels = std::move(scene.true_labels);
      }

      const Scalar dense_prob = spec.iid_tags ? spec.xi : profile(s);
      sample.tag = bernoulli(tag_rng, dense_prob) ? SubpopTag::kDense : SubpopTag::kSparse;
      sample.data.y = sample.tag == SubpopTag::kDense
                          ? true_labels
                          : thin_to_background(true_labels, spec.sparsity_level, label_rng);
      dataset.samples.push_back(std::move(sample));
    }
  }
  return dataset;
}

Dataset generate(const MixtureSpec& spec) {
  if (spec.track == Track::kPlanted) {
    throw DimensionError("generate: planted track needs a model spec");
  }
  return generate(spec, model::ModelSpec{});
}

Dataset subset(const Dataset& dataset, SubsetMode mode, std::uint64_t seed) {
  Dataset out;
  out.spec = dataset.spec;
  out.theta_star = dataset.theta_star;
  switch (mode) {
    case SubsetMode::kFull:
      out.samples = dataset.samples;
      break;
    case SubsetMode::kHalfVol: {
      std::vector<int> volumes;
      for (const Sample& s : dataset.samples) {
        if (std::find(volumes.begin(), volumes.end(), s.volume_id) == volumes.end()) {
          volumes.push_back(s.volume_id);
        }
      }
      Rng rng(seed);
      for (std::size_t i = volumes.size(); i > 1; --i) {
        std::swap(volumes[i - 1], volumes[uniform_index(rng, i)]);
      }
      volumes.resize((volumes.size() + 1) / 2);
      std::sort(volumes.begin(), volumes.end());
      for (const Sample& s : dataset.samples) {
        if (std::binary_search(volumes.begin(), volumes.end(), s.volume_id)) {
          out.samples.push_back(s);
        }
      }
      break;
    }
    case SubsetMode::kHalfSlice:
      for (const Sample& s : dataset.samples) {
        if (s.slice_index % 2 == 0) out.samples.push_back(s);
      }
      break;
    case SubsetMode::kHalfSparse: {
      // Keep the half of each volume ordered sparse-heavy first, i.e. the
      // slices nearest the volume ends where the dense profile is lowest.
      const int n_slices = dataset.spec.slices_per_volume;
      std::vector<int> order(n_slices);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [n_slices](int a, int b) {
        return std::min(a, n_slices - 1 - a) < std::min(b, n_slices - 1 - b);
      });
      order.resize((order.size() + 1) / 2);
      std::sort(order.begin(), order.end());
      for (const Sample& s : dataset.samples) {
        if (std::binary_search(order.begin(), order.end(), s.slice_index)) {
          out.samples.push_back(s);
        }
      }
      break;
    }
  }
  if (out.samples.empty()) throw DimensionError("subset: selection produced an empty dataset");
  return out;
}

std::string to_json(const Dataset& dataset) {
  json doc;
  doc["version"] = 1;
  json spec;
  spec["xi"] = dataset.spec.xi;
  spec["track"] = dataset.spec.track == Track::kPlanted ? "planted" : "geometric";
  spec["num_volumes"] = dataset.spec.num_volumes;
  spec["slices_per_volume"] = dataset.spec.slices_per_volume;
  spec["height"] = dataset.spec.height;
  spec["width"] = dataset.spec.width;
  spec["num_classes"] = dataset.spec.num_classes;
  spec["noise_sigma"] = dataset.spec.noise_sigma;
  spec["sparsity_level"] = dataset.spec.sparsity_level;
  spec["margin_boost"] = dataset.spec.margin_boost;
  spec["iid_tags"] = dataset.spec.iid_tags;
  spec["seed"] = dataset.spec.seed;
  doc["spec"] = std::move(spec);

  json samples = json::array();
  for (const Sample& s : dataset.samples) {
    json rec;
    rec["x"] = vector_to_json(s.data.x);
    json labels = json::array();
    for (Index j = 0; j < s.data.y.size(); ++j) labels.push_back(s.data.y(j));
    rec["y"] = std::move(labels);
    rec["volume_id"] = s.volume_id;
    rec["slice_index"] = s.slice_index;
    rec["tag"] = to_string(s.tag);
    samples.push_back(std::move(rec));
  }
  doc["samples"] = std::move(samples);
  if (dataset.theta_star) doc["theta_star"] = vector_to_json(*dataset.theta_star);
  return doc.dump();
}

Dataset from_json(const std::string& text) {
  json doc = json::parse(text);
  if (!doc.contains("version") || doc["version"].get<int>() != 1) {
    throw ConfigError("dataset: unsupported schema version");
  }
  Dataset dataset;
  const json& spec = doc.at("spec");
  dataset.spec.xi = spec.at("xi").get<double>();
  const std::string track = spec.at("track").get<std::string>();
  if (track == "planted") {
    dataset.spec.track = Track::kPlanted;
  } else if (track == "geometric") {
    dataset.spec.track = Track::kGeometric;
  } else {
    throw ConfigError("dataset: unknown track '" + track + "'");
  }
  dataset.spec.num_volumes = spec.at("num_volumes").get<int>();
  dataset.spec.slices_per_volume = spec.at("slices_per_volume").get<int>();
  dataset.spec.height = spec.at("height").get<int>();
  dataset.spec.width = spec.at("width").get<int>();
  dataset.spec.num_classes = spec.at("num_classes").get<int>();
  dataset.spec.noise_sigma = spec.at("noise_sigma").get<double>();
  dataset.spec.sparsity_level = spec.at("sparsity_level").get<double>();
  dataset.spec.margin_boost = spec.at("margin_boost").get<double>();
  dataset.spec.iid_tags = spec.at("iid_tags").get<bool>();
  dataset.spec.seed = spec.at("seed").get<std::uint64_t>();

  for (const json& rec : doc.at("samples")) {
    Sample s;
    s.data.x = vector_from_json(rec.at("x"));
    const json& labels = rec.at("y");
    s.data.y.resize(labels.size());
    Index j = 0;
    for (const auto& e : labels) s.data.y(j++) = e.get<int>();
    s.volume_id = rec.at("volume_id").get<int>();
    s.slice_index = rec.at("slice_index").get<int>();
    const std::string tag = rec.at("tag").get<std::string>();
    if (tag == "sparse") {
      s.tag = SubpopTag::kSparse;
    } else if (tag == "dense") {
      s.tag = SubpopTag::kDense;
    } else {
      throw ConfigError("dataset: unknown tag '" + tag + "'");
    }
    dataset.samples.push_back(std::move(s));
  }
  if (doc.contains("theta_star")) dataset.theta_star = vector_from_json(doc["theta_star"]);
  return dataset;
}

void save(const Dataset& dataset, const std::filesystem::path& path) {
  atomic_write_file(path, to_json(dataset));
}

Dataset load(const std::filesystem::path& path) { return from_json(read_file(path)); }

}  // namespace adawac::synth
