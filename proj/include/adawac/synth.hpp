// Synthetic datasets for the mixture of label-sparse and label-dense
// conditionals over a shared image marginal, plus the sample-efficiency
// subset selectors and JSON import/export.
#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "adawac/model.hpp"
#include "adawac/types.hpp"

namespace adawac::synth {

enum class Track { kPlanted, kGeometric };
enum class SubsetMode { kFull, kHalfVol, kHalfSlice, kHalfSparse };

struct MixtureSpec {
  Scalar xi = 0.5;  // dense fraction
  Track track = Track::kPlanted;
  int num_volumes = 4;
  int slices_per_volume = 8;
  int height = 8;
  int width = 8;
  int num_classes = 3;
  Scalar noise_sigma = 0.1;
  Scalar sparsity_level = 0.0;  // fraction of true labels kept in sparse samples
  Scalar margin_boost = 1.0;    // scales the planted parameter
  bool iid_tags = false;        // bypass the per-slice bump profile
  std::uint64_t seed = 0;

  int pixels() const { return height * width; }
  int size() const { return num_volumes * slices_per_volume; }
};

void validate(const MixtureSpec& spec);

struct Dataset {
  MixtureSpec spec;
  std::vector<Sample> samples;
  std::optional<Vector> theta_star;  // planted track only

  std::size_t size() const { return samples.size(); }
  Scalar dense_fraction() const;
};

/// Per-slice dense probability profile: symmetric bump, low at both volume
/// ends, mean exactly xi.
Vector sparse_dense_layout(const MixtureSpec& spec);

/// Generates the dataset. The image code path is shared between tags (images
/// are drawn from a dedicated stream before the tag is looked at). The
/// planted track labels pixels by the argmax logits of theta_star under
/// `planted_model` and requires the convex_linear family.
Dataset generate(const MixtureSpec& spec, const model::ModelSpec& planted_model);

/// Geometric-track convenience overload (no planted model involved).
Dataset generate(const MixtureSpec& spec);

/// Subset selectors mirroring the sample-efficiency protocols. `seed` only
/// matters for kHalfVol (uniform choice of volumes).
Dataset subset(const Dataset& dataset, SubsetMode mode, std::uint64_t seed = 0);

std::string to_json(const Dataset& dataset);
Dataset from_json(const std::string& text);
void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

}  // namespace adawac::synth
