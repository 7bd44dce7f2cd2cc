#include "slp/skeleton.h"

#include "slp/errors.h"

#include <fmt/format.h>

#include <cmath>
#include <deque>

namespace slp {

Skeleton Skeleton::build(
    std::vector<std::string> jointNames,
    std::vector<std::optional<std::size_t>> parents,
    std::vector<Vec3> tPose,
    std::size_t root,
    std::pair<std::size_t, std::size_t> shoulders) {
  const std::size_t n = jointNames.size();
  if (n == 0) {
    throw DataError("skeleton has no joints");
  }
  if (parents.size() != n || tPose.size() != n) {
    throw DataError(fmt::format(
        "skeleton field lengths disagree: {} names, {} parents, {} t-pose positions",
        n,
        parents.size(),
        tPose.size()));
  }
  if (root >= n || shoulders.first >= n || shoulders.second >= n) {
    throw DataError("skeleton root or shoulder index out of range");
  }

  std::size_t rootCount = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!parents[j]) {
      ++rootCount;
      if (j != root) {
        throw DataError(fmt::format("joint '{}' has no parent but is not the root", jointNames[j]));
      }
    } else if (*parents[j] >= n) {
      throw DataError(fmt::format("parent index of joint '{}' out of range", jointNames[j]));
    }
    if (!tPose[j].allFinite()) {
      throw DataError(fmt::format("t-pose of joint '{}' is not finite", jointNames[j]));
    }
  }
  // Walking up from every joint must reach the root within n steps.
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t cur = j;
    std::size_t steps = 0;
    while (parents[cur]) {
      cur = *parents[cur];
      if (++steps > n) {
        throw DataError("cyclic skeleton");
      }
    }
  }

  if (rootCount != 1) {
    throw DataError(fmt::format("skeleton must have exactly one root, found {}", rootCount));
  }

  Skeleton s;
  for (std::size_t j = 0; j < n; ++j) {
    if (!parents[j]) {
      continue;
    }
    const Vec3 offset = tPose[j] - tPose[*parents[j]];
    const double length = offset.norm();
    if (!(length > 0.0)) {
      throw DataError(fmt::format(
          "zero-length bone between '{}' and '{}'", jointNames[*parents[j]], jointNames[j]));
    }
    s.bones_.push_back({*parents[j], j});
    s.boneLengths_.push_back(length);
    s.restDirections_.push_back(offset / length);
  }

  // Breadth-first from the root.
  std::vector<std::vector<std::size_t>> childBones(n);
  for (std::size_t b = 0; b < s.bones_.size(); ++b) {
    childBones[s.bones_[b].parent].push_back(b);
  }
  std::deque<std::size_t> queue{root};
  while (!queue.empty()) {
    const std::size_t j = queue.front();
    queue.pop_front();
    for (std::size_t b : childBones[j]) {
      s.traversal_.push_back(b);
      queue.push_back(s.bones_[b].child);
    }
  }

  s.jointNames_ = std::move(jointNames);
  s.parents_ = std::move(parents);
  s.tPose_ = std::move(tPose);
  s.root_ = root;
  s.shoulders_ = shoulders;
  return s;
}

double Skeleton::meanBoneLength() const {
  if (boneLengths_.empty()) {
    return 1.0;
  }
  double sum = 0.0;
  for (double l : boneLengths_) {
    sum += l;
  }
  return sum / static_cast<double>(boneLengths_.size());
}

std::optional<std::size_t> Skeleton::findJoint(const std::string& name) const {
  for (std::size_t j = 0; j < jointNames_.size(); ++j) {
    if (jointNames_[j] == name) {
      return j;
    }
  }
  return std::nullopt;
}

PoseSequence::PoseSequence(std::vector<PoseFrame> frames) : frames_(std::move(frames)) {
  if (frames_.empty()) {
    throw DataError("pose sequence has no frames");
  }
  const std::size_t n = frames_.front().size();
  for (std::size_t t = 0; t < frames_.size(); ++t) {
    if (frames_[t].size() != n) {
      throw DataError(
          fmt::format("frame {} has {} joints, expected {}", t, frames_[t].size(), n));
    }
    for (const Vec3& p : frames_[t]) {
      if (!p.allFinite()) {
        throw DataError(fmt::format("frame {} has a non-finite coordinate", t));
      }
    }
  }
}

void checkCompatible(const PoseSequence& seq, const Skeleton& skeleton) {
  if (seq.jointCount() != skeleton.jointCount()) {
    throw DataError(fmt::format(
        "pose sequence has {} joints but the skeleton has {}",
        seq.jointCount(),
        skeleton.jointCount()));
  }
}

std::vector<Vec3> boneDirections(std::span<const Vec3> frame, const Skeleton& skeleton) {
  if (frame.size() != skeleton.jointCount()) {
    throw DataError(fmt::format(
        "frame has {} joints but the skeleton has {}", frame.size(), skeleton.jointCount()));
  }
  std::vector<Vec3> dirs;
  dirs.reserve(skeleton.boneCount());
  for (std::size_t b = 0; b < skeleton.boneCount(); ++b) {
    const Bone& bone = skeleton.bones()[b];
    const Vec3 offset = frame[bone.child] - frame[bone.parent];
    const double length = offset.norm();
    if (!(length > 0.0)) {
      throw DataError(fmt::format(
          "bone {} ('{}' -> '{}') has coincident joints",
          b,
          skeleton.jointNames()[bone.parent],
          skeleton.jointNames()[bone.child]));
    }
    dirs.push_back(offset / length);
  }
  return dirs;
}

PoseSequence normalizePoseSequence(const PoseSequence& seq, const Skeleton& skeleton) {
  checkCompatible(seq, skeleton);
  double total = 0.0;
  for (const PoseFrame& f : seq.frames()) {
    total += (f[skeleton.leftShoulder()] - f[skeleton.rightShoulder()]).norm();
  }
  const double mean = total / static_cast<double>(seq.frameCount());
  if (!(mean > 0.0)) {
    throw DataError("mean shoulder distance is zero; cannot normalize");
  }
  const double scale = 1.0 / mean;
  std::vector<PoseFrame> frames = seq.frames();
  for (PoseFrame& f : frames) {
    for (Vec3& p : f) {
      p *= scale;
    }
  }
  return PoseSequence(std::move(frames));
}

Skeleton demoSkeleton() {
  // Shoulder-to-shoulder distance is 1 in the T-pose.
  std::vector<std::string> names{
      "head",
      "neck",
      "spine",
      "l_shoulder",
      "l_elbow",
      "l_wrist",
      "l_hand",
      "r_shoulder",
      "r_elbow",
      "r_wrist",
      "r_hand"};
  std::vector<std::optional<std::size_t>> parents{
      std::nullopt, 0, 1, 1, 3, 4, 5, 1, 7, 8, 9};
  std::vector<Vec3> tPose{
      Vec3(0.0, 0.0, 0.0),
      Vec3(0.0, -0.3, 0.0),
      Vec3(0.0, -1.0, 0.0),
      Vec3(0.5, -0.35, 0.0),
      Vec3(0.95, -0.35, 0.0),
      Vec3(1.35, -0.35, 0.0),
      Vec3(1.5, -0.35, 0.0),
      Vec3(-0.5, -0.35, 0.0),
      Vec3(-0.95, -0.35, 0.0),
      Vec3(-1.35, -0.35, 0.0),
      Vec3(-1.5, -0.35, 0.0)};
  return Skeleton::build(std::move(names), std::move(parents), std::move(tPose), 0, {3, 7});
}

} // namespace slp
