// Core dense types and domain records shared across the library.
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace adawac {

using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;
using Index = Eigen::Index;

/// Image plus per-pixel class labels; the only view of a sample that
/// optimizer code is allowed to see (no subpopulation metadata).
struct LabeledImage {
  Vector x;     // flattened pixels, length d = height * width
  IntVector y;  // per-pixel class labels in [0, K)
};

enum class SubpopTag { kSparse, kDense };

inline const char* to_string(SubpopTag t) {
  return t == SubpopTag::kSparse ? "sparse" : "dense";
}

/// Full sample record with evaluation-only metadata.
struct Sample {
  LabeledImage data;
  int volume_id = 0;
  int slice_index = 0;
  SubpopTag tag = SubpopTag::kSparse;
};

enum class LatentMetric { kEuclidean, kSquaredEuclidean };

struct LossPair {
  Scalar ce = 0.0;
  Scalar ac = 0.0;
};

/// Probabilities below this are clamped before any log.
inline constexpr Scalar kProbClamp = 1e-12;

}  // namespace adawac
