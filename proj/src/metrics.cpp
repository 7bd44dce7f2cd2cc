#include "slp/metrics.h"

#include "slp/errors.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace slp {

Alignment dtwAlign(std::size_t predLength, std::size_t gtLength, const FrameCost& cost) {
  if (predLength == 0 || gtLength == 0) {
    throw DataError("dtw_align: empty sequence");
  }
  const std::size_t n = predLength;
  const std::size_t m = gtLength;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(n * m, kInf);
  // 0 = diagonal, 1 = (0,1) step, 2 = (1,0) step
  std::vector<unsigned char> from(n * m, 0);
  auto at = [m](std::size_t i, std::size_t j) { return i * m + j; };

  acc[0] = cost(0, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == 0 && j == 0) {
        continue;
      }
      double best = kInf;
      unsigned char move = 0;
      if (i > 0 && j > 0) {
        best = acc[at(i - 1, j - 1)];
        move = 0;
      }
      if (j > 0 && acc[at(i, j - 1)] < best) {
        best = acc[at(i, j - 1)];
        move = 1;
      }
      if (i > 0 && acc[at(i - 1, j)] < best) {
        best = acc[at(i - 1, j)];
        move = 2;
      }
      acc[at(i, j)] = best + cost(i, j);
      from[at(i, j)] = move;
    }
  }

  Alignment result;
  result.totalCost = acc[at(n - 1, m - 1)];
  std::size_t i = n - 1;
  std::size_t j = m - 1;
  result.path.pairs.emplace_back(i, j);
  while (i > 0 || j > 0) {
    switch (from[at(i, j)]) {
      case 0:
        --i;
        --j;
        break;
      case 1:
        --j;
        break;
      default:
        --i;
        break;
    }
    result.path.pairs.emplace_back(i, j);
  }
  std::reverse(result.path.pairs.begin(), result.path.pairs.end());
  return result;
}

double positionalFrameCost(std::span<const Vec3> a, std::span<const Vec3> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    s += (a[j] - b[j]).norm();
  }
  return s / static_cast<double>(a.size());
}

double angularFrameCost(std::span<const UnitQuaternion> a, std::span<const UnitQuaternion> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += geodesicDistance(a[i], b[i]);
  }
  return s / static_cast<double>(a.size());
}

namespace {

void requireSameJoints(const PoseSequence& pred, const PoseSequence& gt, const char* metric) {
  if (pred.jointCount() != gt.jointCount()) {
    throw DataError(fmt::format(
        "{}: prediction has {} joints, ground truth {}", metric, pred.jointCount(), gt.jointCount()));
  }
}

Alignment positionalAlignment(const PoseSequence& pred, const PoseSequence& gt) {
  return dtwAlign(pred.frameCount(), gt.frameCount(), [&](std::size_t i, std::size_t j) {
    return positionalFrameCost(pred.frame(i), gt.frame(j));
  });
}

std::vector<std::size_t> jointSubset(
    std::optional<std::span<const std::size_t>> joints,
    std::size_t jointCount) {
  std::vector<std::size_t> out;
  if (joints) {
    for (std::size_t j : *joints) {
      if (j >= jointCount) {
        throw DataError(fmt::format("joint index {} out of range", j));
      }
      out.push_back(j);
    }
    if (out.empty()) {
      throw DataError("empty joint subset");
    }
  } else {
    for (std::size_t j = 0; j < jointCount; ++j) {
      out.push_back(j);
    }
  }
  return out;
}

} // namespace

double mje(
    const PoseSequence& pred,
    const PoseSequence& gt,
    std::optional<std::span<const std::size_t>> joints) {
  requireSameJoints(pred, gt, "mje");
  const std::vector<std::size_t> subset = jointSubset(joints, gt.jointCount());
  const Alignment a = positionalAlignment(pred, gt);
  double s = 0.0;
  for (const auto& [i, j] : a.path.pairs) {
    for (std::size_t k : subset) {
      s += (pred.frame(i)[k] - gt.frame(j)[k]).norm();
    }
  }
  return s / static_cast<double>(a.path.pairs.size() * subset.size());
}

double mbae(const RotationSequence& pred, const RotationSequence& gt) {
  if (pred.boneCount() != gt.boneCount()) {
    throw DataError(fmt::format(
        "mbae: prediction has {} bones, ground truth {}", pred.boneCount(), gt.boneCount()));
  }
  const Alignment a = dtwAlign(pred.frameCount(), gt.frameCount(), [&](std::size_t i, std::size_t j) {
    return angularFrameCost(pred.quats()[i], gt.quats()[j]);
  });
  double s = 0.0;
  for (const auto& [i, j] : a.path.pairs) {
    for (std::size_t b = 0; b < gt.boneCount(); ++b) {
      s += geodesicDistance(pred.quats()[i][b], gt.quats()[j][b]);
    }
  }
  const double radians = s / static_cast<double>(a.path.pairs.size() * gt.boneCount());
  return radians * 180.0 / std::numbers::pi;
}

std::vector<double> boundingDiskRadii(const PoseSequence& gt) {
  std::vector<double> radii(gt.jointCount(), 0.0);
  const double frames = static_cast<double>(gt.frameCount());
  for (std::size_t j = 0; j < gt.jointCount(); ++j) {
    double cx = 0.0;
    double cy = 0.0;
    for (const PoseFrame& f : gt.frames()) {
      cx += f[j].x();
      cy += f[j].y();
    }
    cx /= frames;
    cy /= frames;
    for (const PoseFrame& f : gt.frames()) {
      radii[j] = std::max(radii[j], std::hypot(f[j].x() - cx, f[j].y() - cy));
    }
  }
  return radii;
}

double pck(
    const PoseSequence& pred,
    const PoseSequence& gt,
    double fallbackRadius,
    double alpha,
    std::optional<std::span<const std::size_t>> joints) {
  requireSameJoints(pred, gt, "pck");
  if (!(alpha > 0.0)) {
    throw DataError("pck: alpha must be positive");
  }
  const std::vector<std::size_t> subset = jointSubset(joints, gt.jointCount());
  std::vector<double> radii = boundingDiskRadii(gt);
  for (double& r : radii) {
    if (r < 1e-9) {
      r = fallbackRadius;
    }
  }
  const Alignment a = positionalAlignment(pred, gt);
  std::size_t correct = 0;
  for (const auto& [i, j] : a.path.pairs) {
    for (std::size_t k : subset) {
      const Vec3& p = pred.frame(i)[k];
      const Vec3& g = gt.frame(j)[k];
      if (std::hypot(p.x() - g.x(), p.y() - g.y()) <= alpha * radii[k]) {
        ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(a.path.pairs.size() * subset.size());
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  s.count = values.size();
  if (values.empty()) {
    return s;
  }
  for (double v : values) {
    s.mean += v;
  }
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) {
    var += (v - s.mean) * (v - s.mean);
  }
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

} // namespace slp
