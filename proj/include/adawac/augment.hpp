// Augmentation distribution over the pixel grid: quarter-turn rotations and
// mirroring realized as exact permutations (the dihedral group of the grid).
#pragma once

#include <utility>

#include "adawac/types.hpp"
#include "adawac/util.hpp"

namespace adawac::aug {

/// One element of the grid's dihedral group. Immutable after construction;
/// `perm` caches the index map so application is a gather.
struct AugmentationOp {
  int rotation_quarters = 0;  // in {0,1,2,3}, counterclockwise
  bool mirrored = false;      // left-right flip, applied before rotation
  int height = 0;
  int width = 0;
  IntVector perm;  // output[p] = x[perm[p]]
};

/// Builds the op for (rotation_quarters, mirrored) on an H x W grid.
/// Odd quarter turns require a square grid.
AugmentationOp make_op(int rotation_quarters, bool mirrored, int height, int width);

AugmentationOp identity_op(int height, int width);

/// Group composition: apply(compose(a, b), x) == apply(a, apply(b, x)).
AugmentationOp compose(const AugmentationOp& a, const AugmentationOp& b);

/// Applies the permutation; pure gather, no value change.
Vector apply(const AugmentationOp& a, const Vector& x);

/// Uniform draw from the valid group: all 8 elements for square grids, the 4
/// non-quarter-turn elements otherwise.
AugmentationOp sample_op(Rng& rng, int height, int width);

std::pair<AugmentationOp, AugmentationOp> sample_pair(Rng& rng, int height, int width);

}  // namespace adawac::aug
