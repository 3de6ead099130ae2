#include "adawac/augment.hpp"

namespace adawac::aug {

AugmentationOp make_op(int rotation_quarters, bool mirrored, int height, int width) {
  if (height < 1 || width < 1) throw DimensionError("make_op: grid dims must be positive");
  rotation_quarters = ((rotation_quarters % 4) + 4) % 4;
  if ((rotation_quarters % 2) != 0 && height != width) {
    throw DimensionError("make_op: odd quarter turns require a square grid (got " +
                         std::to_string(height) + "x" + std::to_string(width) + ")");
  }
  AugmentationOp op;
  op.rotation_quarters = rotation_quarters;
  op.mirrored = mirrored;
  op.height = height;
  op.width = width;
  op.perm.resize(static_cast<Index>(height) * width);
  // The op is R^q . F^m (mirror first, then rotate counterclockwise).
  // One CCW quarter turn reads out(r, c) = in(c, W-1-r); a mirror reads
  // out(r, c) = in(r, W-1-c). Walk each output coordinate back to its source.
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      int sr = r, sc = c;
      for (int q = 0; q < rotation_quarters; ++q) {
        const int nr = sc, nc = width - 1 - sr;
        sr = nr;
        sc = nc;
      }
      if (mirrored) sc = width - 1 - sc;
      op.perm(static_cast<Index>(r) * width + c) = sr * width + sc;
    }
  }
  return op;
}

AugmentationOp identity_op(int height, int width) { return make_op(0, false, height, width); }

AugmentationOp compose(const AugmentationOp& a, const AugmentationOp& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("compose: grid dims differ");
  }
  // R^qa F^ma . R^qb F^mb = R^(qa + qb') F^(ma xor mb), where passing b's
  // rotation through a's mirror flips its direction: qb' = qb if !ma else -qb.
  const int qb = a.mirrored ? (4 - b.rotation_quarters) % 4 : b.rotation_quarters;
  const int q = (a.rotation_quarters + qb) % 4;
  return make_op(q, a.mirrored != b.mirrored, a.height, a.width);
}

Vector apply(const AugmentationOp& a, const Vector& x) {
  if (x.size() != a.perm.size()) {
    throw DimensionError("apply: pixel vector length " + std::to_string(x.size()) +
                         " != grid size " + std::to_string(a.perm.size()));
  }
  Vector out(x.size());
  for (Index p = 0; p < x.size(); ++p) out(p) = x(a.perm(p));
  return out;
}

AugmentationOp sample_op(Rng& rng, int height, int width) {
  if (height == width) {
    const auto idx = uniform_index(rng, 8);
    return make_op(static_cast<int>(idx % 4), idx >= 4, height, width);
  }
  // Non-square grids: the 4 shape-preserving elements {0, 180} x {mirror}.
  const auto idx = uniform_index(rng, 4);
  return make_op(static_cast<int>(idx % 2) * 2, idx >= 2, height, width);
}

std::pair<AugmentationOp, AugmentationOp> sample_pair(Rng& rng, int height, int width) {
  AugmentationOp first = sample_op(rng, height, width);
  AugmentationOp second = sample_op(rng, height, width);
  return {std::move(first), std::move(second)};
}

}  // namespace adawac::aug
