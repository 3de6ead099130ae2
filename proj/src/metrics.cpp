#include "adawac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adawac::metrics {
namespace {

constexpr Scalar kInf = std::numeric_limits<Scalar>::infinity();

void check_pair(const MaskPair& pair) {
  const Index d = static_cast<Index>(pair.height) * pair.width;
  if (pair.pred.size() != d || pair.gt.size() != d) {
    throw DimensionError("mask pair: mask lengths must equal height*width");
  }
}

// 1-d lower envelope of parabolas rooted at (i, f(i)); the Felzenszwalb-
// Huttenlocher exact squared-distance transform pass. Cells with f = +inf
// carry no parabola.
void dt_1d(const std::vector<Scalar>& f, std::vector<Scalar>& out) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(static_cast<std::size_t>(n));
  std::vector<Scalar> z(static_cast<std::size_t>(n) + 1);
  int k = -1;  // rightmost parabola of the envelope
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    Scalar s = 0.0;
    while (k >= 0) {
      const int p = v[k];
      s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
    } else {
      ++k;
      v[k] = q;
      z[k] = s;
    }
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  out.resize(f.size());
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
    const int p = v[j];
    out[q] = static_cast<Scalar>(q - p) * static_cast<Scalar>(q - p) + f[p];
  }
}

Scalar directed_hd95(const std::vector<Scalar>& sq_dist_to_other, const IntVector& from,
                     Index d) {
  std::vector<Scalar> dists;
  for (Index p = 0; p < d; ++p) {
    if (from(p) != 0) dists.push_back(std::sqrt(sq_dist_to_other[static_cast<std::size_t>(p)]));
  }
  return percentile_linear(std::move(dists), 0.95);
}

}  // namespace

Scalar dsc_metric(const MaskPair& pair, DscConvention convention) {
  check_pair(pair);
  long long inter = 0, pred_sum = 0, gt_sum = 0;
  for (Index p = 0; p < pair.pred.size(); ++p) {
    const bool a = pair.pred(p) != 0;
    const bool b = pair.gt(p) != 0;
    inter += a && b;
    pred_sum += a;
    gt_sum += b;
  }
  if (pred_sum == 0 && gt_sum == 0) return 1.0;
  if (gt_sum == 0 && pred_sum > 0) {
    return convention == DscConvention::kCorrected ? 0.0 : 1.0;
  }
  return 2.0 * static_cast<Scalar>(inter) / static_cast<Scalar>(pred_sum + gt_sum);
}

Scalar percentile_linear(std::vector<Scalar> values, Scalar q) {
  if (values.empty()) throw DimensionError("percentile: empty value list");
  std::sort(values.begin(), values.end());
  const Scalar rank = q * static_cast<Scalar>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  const Scalar frac = rank - static_cast<Scalar>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<Scalar> squared_distance_transform(const IntVector& mask, int height, int width) {
  const auto d = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  std::vector<Scalar> grid(d);
  for (std::size_t p = 0; p < d; ++p) grid[p] = mask(static_cast<Index>(p)) != 0 ? 0.0 : kInf;

  // Columns first, then rows.
  std::vector<Scalar> f(static_cast<std::size_t>(std::max(height, width)));
  std::vector<Scalar> out(f.size());
  for (int c = 0; c < width; ++c) {
    for (int r = 0; r < height; ++r) f[static_cast<std::size_t>(r)] = grid[static_cast<std::size_t>(r) * width + c];
    dt_1d({f.begin(), f.begin() + height}, out);
    for (int r = 0; r < height; ++r) grid[static_cast<std::size_t>(r) * width + c] = out[static_cast<std::size_t>(r)];
  }
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) f[static_cast<std::size_t>(c)] = grid[static_cast<std::size_t>(r) * width + c];
    dt_1d({f.begin(), f.begin() + width}, out);
    for (int c = 0; c < width; ++c) grid[static_cast<std::size_t>(r) * width + c] = out[static_cast<std::size_t>(c)];
  }
  return grid;
}

Scalar hd95(const MaskPair& pair, Hd95EmptyConvention convention) {
  check_pair(pair);
  const bool pred_empty = (pair.pred.array() == 0).all();
  const bool gt_empty = (pair.gt.array() == 0).all();
  if (pred_empty && gt_empty) return 0.0;
  if (pred_empty != gt_empty) {
    return convention == Hd95EmptyConvention::kPaperZero
               ? 0.0
               : std::numeric_limits<Scalar>::quiet_NaN();
  }
  const Index d = static_cast<Index>(pair.height) * pair.width;
  const auto dist_to_gt = squared_distance_transform(pair.gt, pair.height, pair.width);
  const auto dist_to_pred = squared_distance_transform(pair.pred, pair.height, pair.width);
  return std::max(directed_hd95(dist_to_gt, pair.pred, d),
                  directed_hd95(dist_to_pred, pair.gt, d));
}

IntVector argmax_mask(const Matrix& probs, int class_id) {
  IntVector mask(probs.rows());
  for (Index j = 0; j < probs.rows(); ++j) {
    Index argmax = 0;
    probs.row(j).maxCoeff(&argmax);
    mask(j) = argmax == class_id ? 1 : 0;
  }
  return mask;
}

IntVector label_mask(const IntVector& y, int class_id) {
  IntVector mask(y.size());
  for (Index j = 0; j < y.size(); ++j) mask(j) = y(j) == class_id ? 1 : 0;
  return mask;
}

}  // namespace adawac::metrics
