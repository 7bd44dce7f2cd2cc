#pragma once

#include "slp/skeleton.h"

#include <cmath>
#include <random>
#include <vector>

namespace fixture {

inline slp::Vec3 randomUnit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    slp::Vec3 v(n(rng), n(rng), n(rng));
    if (v.norm() > 1e-3) {
      return v.normalized();
    }
  }
}

// Random frames whose bone lengths match the skeleton: every child joint is
// placed at its parent plus bone length times a random unit direction.
inline slp::PoseSequence randomPoses(const slp::Skeleton& s, std::size_t frames, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<slp::PoseFrame> out;
  for (std::size_t t = 0; t < frames; ++t) {
    slp::PoseFrame f(s.jointCount());
    f[s.root()] = slp::Vec3(u(rng), u(rng), u(rng));
    for (std::size_t j : s.traversal()) {
      const slp::Bone& b = s.bones()[j];
      f[b.child] = f[b.parent] + s.boneLengths()[j] * randomUnit(rng);
    }
    out.push_back(std::move(f));
  }
  return slp::PoseSequence(std::move(out));
}

inline slp::PoseSequence repeatFrame(const std::vector<slp::Vec3>& frame, std::size_t frames) {
  return slp::PoseSequence(std::vector<slp::PoseFrame>(frames, frame));
}

} // namespace fixture
