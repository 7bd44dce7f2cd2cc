#include "slp/rotation.h"

#include "slp/errors.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace slp {

namespace {

constexpr double kSmallAngle = 1e-7;
constexpr double kUnitTolerance = 1e-6;

} // namespace

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DataError("quaternion must be finite and nonzero");
  }
  w_ = w / n;
  x_ = x / n;
  y_ = y / n;
  z_ = z / n;
}

UnitQuaternion UnitQuaternion::fromAxisAngle(const Vec3& axis, double angle) {
  const Vec3 u = axis.normalized();
  const double s = std::sin(angle / 2.0);
  return {std::cos(angle / 2.0), s * u.x(), s * u.y(), s * u.z()};
}

UnitQuaternion UnitQuaternion::conjugate() const {
  return {Raw{}, w_, -x_, -y_, -z_};
}

UnitQuaternion UnitQuaternion::operator-() const {
  return {Raw{}, -w_, -x_, -y_, -z_};
}

double UnitQuaternion::dot(const UnitQuaternion& o) const {
  return w_ * o.w_ + x_ * o.x_ + y_ * o.y_ + z_ * o.z_;
}

UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
  return {
      a.w_ * b.w_ - a.x_ * b.x_ - a.y_ * b.y_ - a.z_ * b.z_,
      a.w_ * b.x_ + a.x_ * b.w_ + a.y_ * b.z_ - a.z_ * b.y_,
      a.w_ * b.y_ - a.x_ * b.z_ + a.y_ * b.w_ + a.z_ * b.x_,
      a.w_ * b.z_ + a.x_ * b.y_ - a.y_ * b.x_ + a.z_ * b.w_};
}

Vec3 rotateVector(const UnitQuaternion& q, const Vec3& v) {
  // v' = v + 2w (u x v) + 2 u x (u x v)
  const Vec3 u = q.vec();
  const Vec3 t = 2.0 * u.cross(v);
  return v + q.w() * t + u.cross(t);
}

UnitQuaternion quatFromBonePair(const Vec3& v, const Vec3& v0) {
  if (std::abs(v.norm() - 1.0) > kUnitTolerance || std::abs(v0.norm() - 1.0) > kUnitTolerance) {
    throw DataError(fmt::format(
        "bone directions must be unit vectors (norms {} and {})", v.norm(), v0.norm()));
  }
  const Vec3 cross = v.cross(v0);
  const double sinTheta = cross.norm();
  const double cosTheta = std::clamp(v.dot(v0), -1.0, 1.0);
  // atan2 equals arccos(v . v0) for unit inputs and keeps full precision near 0 and pi.
  const double theta = std::atan2(sinTheta, cosTheta);
  if (theta < kSmallAngle) {
    return UnitQuaternion::identity();
  }
  Vec3 axis;
  if (std::numbers::pi - theta < kSmallAngle) {
    Eigen::Index k = 0;
    v0.cwiseAbs().minCoeff(&k);
    axis = v0.cross(Vec3::Unit(k)).normalized();
  } else {
    axis = cross / sinTheta;
  }
  const double s = std::sin(theta / 2.0);
  return {std::cos(theta / 2.0), s * axis.x(), s * axis.y(), s * axis.z()};
}

double geodesicDistance(const UnitQuaternion& q1, const UnitQuaternion& q2) {
  // Equal to acos(2 (q1.q2)^2 - 1), without the loss of precision near 0.
  if (q1 == q2 || q1 == -q2) {
    return 0.0;
  }
  const UnitQuaternion r = q1.conjugate() * q2;
  return 2.0 * std::atan2(r.vec().norm(), std::abs(r.w()));
}

RotationSequence::RotationSequence(
    std::vector<std::vector<UnitQuaternion>> quats,
    std::vector<Vec3> rootPositions)
    : quats_(std::move(quats)), rootPositions_(std::move(rootPositions)) {
  if (quats_.empty()) {
    throw DataError("rotation sequence has no frames");
  }
  if (quats_.size() != rootPositions_.size()) {
    throw DataError(fmt::format(
        "rotation sequence has {} quaternion frames but {} root positions",
        quats_.size(),
        rootPositions_.size()));
  }
  for (std::size_t t = 0; t < quats_.size(); ++t) {
    if (quats_[t].size() != quats_.front().size()) {
      throw DataError(fmt::format(
          "frame {} has {} bones, expected {}", t, quats_[t].size(), quats_.front().size()));
    }
    if (!rootPositions_[t].allFinite()) {
      throw DataError(fmt::format("frame {} has a non-finite root position", t));
    }
  }
}

RotationSequence encode(const PoseSequence& seq, const Skeleton& skeleton) {
  checkCompatible(seq, skeleton);
  std::vector<std::vector<UnitQuaternion>> quats;
  std::vector<Vec3> roots;
  quats.reserve(seq.frameCount());
  roots.reserve(seq.frameCount());
  for (const PoseFrame& frame : seq.frames()) {
    const std::vector<Vec3> dirs = boneDirections(frame, skeleton);
    std::vector<UnitQuaternion> q;
    q.reserve(dirs.size());
    for (std::size_t b = 0; b < dirs.size(); ++b) {
      q.push_back(quatFromBonePair(dirs[b], skeleton.restDirections()[b]));
    }
    quats.push_back(std::move(q));
    roots.push_back(frame[skeleton.root()]);
  }
  return {std::move(quats), std::move(roots)};
}

PoseSequence decode(const RotationSequence& rots, const Skeleton& skeleton) {
  if (rots.boneCount() != skeleton.boneCount()) {
    throw DataError(fmt::format(
        "rotation sequence has {} bones but the skeleton has {}",
        rots.boneCount(),
        skeleton.boneCount()));
  }
  std::vector<PoseFrame> frames;
  frames.reserve(rots.frameCount());
  for (std::size_t t = 0; t < rots.frameCount(); ++t) {
    PoseFrame frame(skeleton.jointCount(), Vec3::Zero());
    frame[skeleton.root()] = rots.rootPositions()[t];
    for (std::size_t b : skeleton.traversal()) {
      const Bone& bone = skeleton.bones()[b];
      const Vec3 dir = rotateVector(rots.quats()[t][b].conjugate(), skeleton.restDirections()[b]);
      frame[bone.child] = frame[bone.parent] + skeleton.boneLengths()[b] * dir;
    }
    frames.push_back(std::move(frame));
  }
  return PoseSequence(std::move(frames));
}

} // namespace slp
