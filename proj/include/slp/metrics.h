#pragma once

#include "slp/rotation.h"
#include "slp/skeleton.h"

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace slp {

inline constexpr double kDefaultPckAlpha = 0.2;

/// Monotone frame correspondence from (0, 0) to (predLast, gtLast) using
/// steps (1,0), (0,1), (1,1).
struct AlignmentPath {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

struct Alignment {
  AlignmentPath path;
  double totalCost = 0.0;
};

using FrameCost = std::function<double(std::size_t predFrame, std::size_t gtFrame)>;

/// Minimum accumulated-cost alignment. Ties prefer the diagonal step, then
/// (0,1), then (1,0).
Alignment dtwAlign(std::size_t predLength, std::size_t gtLength, const FrameCost& cost);

// Mean per-joint Euclidean distance between two frames.
double positionalFrameCost(std::span<const Vec3> a, std::span<const Vec3> b);
// Mean per-bone geodesic distance between two frames, radians.
double angularFrameCost(std::span<const UnitQuaternion> a, std::span<const UnitQuaternion> b);

/// Mean joint error over DTW-aligned frame pairs. With `joints`, alignment
/// still uses all joints but only the listed ones are averaged.
double mje(
    const PoseSequence& pred,
    const PoseSequence& gt,
    std::optional<std::span<const std::size_t>> joints = std::nullopt);

/// Mean bone angle error in degrees over angular-DTW-aligned frame pairs.
double mbae(const RotationSequence& pred, const RotationSequence& gt);

/// Fraction of aligned (frame, joint) pairs whose (x, y) error is within
/// alpha times the joint's ground-truth bounding-disk radius. The disk is
/// centered at the centroid of the joint's projected trajectory; radii
/// below 1e-9 are replaced by `fallbackRadius`.
double pck(
    const PoseSequence& pred,
    const PoseSequence& gt,
    double fallbackRadius,
    double alpha = kDefaultPckAlpha,
    std::optional<std::span<const std::size_t>> joints = std::nullopt);

// Per-joint bounding-disk radii of the projected ground-truth trajectory.
std::vector<double> boundingDiskRadii(const PoseSequence& gt);

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

// Population standard deviation.
MetricSummary summarize(std::span<const double> values);

} // namespace slp
