#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace slp {

using Vec3 = Eigen::Vector3d;

struct Bone {
  std::size_t parent;
  std::size_t child;

  bool operator==(const Bone&) const = default;
};

/// Joint graph with a reference T-pose. Immutable after construction.
///
/// Bones are ordered by child-joint index; `traversal()` gives an order in
/// which every bone's parent joint is placed before the bone itself.
class Skeleton {
 public:
  static Skeleton build(
      std::vector<std::string> jointNames,
      std::vector<std::optional<std::size_t>> parents,
      std::vector<Vec3> tPose,
      std::size_t root,
      std::pair<std::size_t, std::size_t> shoulders);

  std::size_t jointCount() const {
    return jointNames_.size();
  }
  std::size_t boneCount() const {
    return bones_.size();
  }

  const std::vector<std::string>& jointNames() const {
    return jointNames_;
  }
  const std::vector<std::optional<std::size_t>>& parents() const {
    return parents_;
  }
  const std::vector<Vec3>& tPose() const {
    return tPose_;
  }
  const std::vector<Bone>& bones() const {
    return bones_;
  }
  const std::vector<double>& boneLengths() const {
    return boneLengths_;
  }
  // Unit T-pose direction of each bone.
  const std::vector<Vec3>& restDirections() const {
    return restDirections_;
  }
  // Bone indices in root-first order.
  const std::vector<std::size_t>& traversal() const {
    return traversal_;
  }
  std::size_t root() const {
    return root_;
  }
  std::size_t leftShoulder() const {
    return shoulders_.first;
  }
  std::size_t rightShoulder() const {
    return shoulders_.second;
  }
  double meanBoneLength() const;

  std::optional<std::size_t> findJoint(const std::string& name) const;

  bool operator==(const Skeleton&) const = default;

 private:
  Skeleton() = default;

  std::vector<std::string> jointNames_;
  std::vector<std::optional<std::size_t>> parents_;
  std::vector<Vec3> tPose_;
  std::vector<Bone> bones_;
  std::vector<double> boneLengths_;
  std::vector<Vec3> restDirections_;
  std::vector<std::size_t> traversal_;
  std::size_t root_ = 0;
  std::pair<std::size_t, std::size_t> shoulders_{0, 0};
};

using PoseFrame = std::vector<Vec3>;

/// Frames of 3D joint positions. At least one frame; every frame has the
/// same joint count and only finite coordinates.
class PoseSequence {
 public:
  explicit PoseSequence(std::vector<PoseFrame> frames);

  std::size_t frameCount() const {
    return frames_.size();
  }
  std::size_t jointCount() const {
    return frames_.front().size();
  }
  const std::vector<PoseFrame>& frames() const {
    return frames_;
  }
  const PoseFrame& frame(std::size_t t) const {
    return frames_.at(t);
  }

  bool operator==(const PoseSequence&) const = default;

 private:
  std::vector<PoseFrame> frames_;
};

/// Unit direction of every bone in `frame`. Throws DataError naming the bone
/// if a parent and child joint coincide.
std::vector<Vec3> boneDirections(std::span<const Vec3> frame, const Skeleton& skeleton);

/// Rescales the whole sequence by one factor so that the mean
/// shoulder-to-shoulder distance over all frames becomes 1. No re-centering.
PoseSequence normalizePoseSequence(const PoseSequence& seq, const Skeleton& skeleton);

/// Throws DataError unless every frame of `seq` has one position per joint.
void checkCompatible(const PoseSequence& seq, const Skeleton& skeleton);

/// 11-joint upper-body skeleton rooted at the head, used by tests and the
/// synthetic dataset. Arms are horizontal in the T-pose.
Skeleton demoSkeleton();

} // namespace slp
