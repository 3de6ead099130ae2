// Segmentation evaluation: per-class DSC with the corrected empty-mask
// conventions, and the 95th-percentile Hausdorff distance.
#pragma once

#include <vector>

#include "adawac/types.hpp"
#include "adawac/util.hpp"

namespace adawac::metrics {

struct MaskPair {
  IntVector pred;  // binary over the grid, row-major
  IntVector gt;
  int height = 0;
  int width = 0;
};

enum class DscConvention {
  kCorrected,       // both empty -> 1; gt empty but pred nonempty -> 0
  kTransUNetLegacy  // gt empty but pred nonempty -> 1 (legacy behavior)
};

enum class Hd95EmptyConvention {
  kPaperZero,  // exactly one side empty -> 0
  kSentinel    // exactly one side empty -> NaN, excluded from averages
};

Scalar dsc_metric(const MaskPair& pair, DscConvention convention);

/// Inclusive linear interpolation percentile (rank = q * (m - 1)) over an
/// unsorted list of values.
Scalar percentile_linear(std::vector<Scalar> values, Scalar q);

/// Max of the two directed 95th-percentile Euclidean distances between
/// foreground pixel sets. Both masks empty -> 0. Exactly one empty: see
/// Hd95EmptyConvention. Implemented with an exact Euclidean distance
/// transform (two-pass parabola envelope).
Scalar hd95(const MaskPair& pair, Hd95EmptyConvention convention);

/// Squared Euclidean distance from every grid cell to the nearest foreground
/// cell of `mask`; all entries +inf when the mask is empty.
std::vector<Scalar> squared_distance_transform(const IntVector& mask, int height, int width);

/// Extracts argmax-class binary mask k from a d x K probability matrix.
IntVector argmax_mask(const Matrix& probs, int class_id);
IntVector label_mask(const IntVector& y, int class_id);

}  // namespace adawac::metrics
