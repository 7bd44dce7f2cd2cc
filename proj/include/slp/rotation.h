#pragma once

#include "slp/skeleton.h"

#include <array>
#include <cstddef>
#include <vector>

namespace slp {

/// Rotation stored as (w, x, y, z). The constructor renormalizes, so every
/// instance is unit length within rounding.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;
  // Throws DataError on a zero or non-finite input.
  UnitQuaternion(double w, double x, double y, double z);

  static UnitQuaternion identity() {
    return {};
  }
  static UnitQuaternion fromAxisAngle(const Vec3& axis, double angle);

  double w() const {
    return w_;
  }
  double x() const {
    return x_;
  }
  double y() const {
    return y_;
  }
  double z() const {
    return z_;
  }
  Vec3 vec() const {
    return {x_, y_, z_};
  }
  std::array<double, 4> coeffs() const {
    return {w_, x_, y_, z_};
  }

  UnitQuaternion conjugate() const;
  UnitQuaternion operator-() const;
  double dot(const UnitQuaternion& other) const;

  bool operator==(const UnitQuaternion&) const = default;

 private:
  struct Raw {};
  UnitQuaternion(Raw, double w, double x, double y, double z) : w_(w), x_(x), y_(y), z_(z) {}
  friend UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b);

  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

// Hamilton product; a * b applies b first.
UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b);

/// q v q*.
Vec3 rotateVector(const UnitQuaternion& q, const Vec3& v);

/// Rotation of angle theta = arccos(v . v0) about u = (v x v0) / |v x v0|,
/// i.e. the rotation carrying `v` onto `v0`. Identity below 1e-7 rad; at the
/// antiparallel singularity the axis is v0 x e_k with e_k the coordinate
/// axis least aligned with v0. Both inputs must be unit within 1e-6.
UnitQuaternion quatFromBonePair(const Vec3& v, const Vec3& v0);

/// Rotation angle between two orientations, in [0, pi]. Invariant to the
/// sign of either argument.
double geodesicDistance(const UnitQuaternion& q1, const UnitQuaternion& q2);

/// Per-frame bone rotations relative to the T-pose plus the root trajectory.
class RotationSequence {
 public:
  RotationSequence(std::vector<std::vector<UnitQuaternion>> quats, std::vector<Vec3> rootPositions);

  std::size_t frameCount() const {
    return quats_.size();
  }
  std::size_t boneCount() const {
    return quats_.front().size();
  }
  const std::vector<std::vector<UnitQuaternion>>& quats() const {
    return quats_;
  }
  const std::vector<Vec3>& rootPositions() const {
    return rootPositions_;
  }

  bool operator==(const RotationSequence&) const = default;

 private:
  std::vector<std::vector<UnitQuaternion>> quats_;
  std::vector<Vec3> rootPositions_;
};

/// Pose -> rotations. Frame t, bone i gets quatFromBonePair(v_i[t], v0_i).
RotationSequence encode(const PoseSequence& seq, const Skeleton& skeleton);

/// Rotations -> pose by forward kinematics from the root. Each child is placed
/// at parent + length * rotate(conj(q), v0); the conjugate undoes the
/// v -> v0 direction that `encode` stores.
PoseSequence decode(const RotationSequence& rots, const Skeleton& skeleton);

} // namespace slp
