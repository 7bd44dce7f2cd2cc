#include "slp/trainer.h"

#include "slp/errors.h"

#include <fmt/format.h>

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace slp {

namespace {

// Independent streams derived from the spec seed.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{
      static_cast<std::uint32_t>(seed),
      static_cast<std::uint32_t>(seed >> 32),
      static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

struct BoneCurve {
  Vec3 axis;
  double primary = 0.0;    // amplitude of sin(pi s)
  double secondary = 0.0;  // amplitude of sin(2 pi s)
};

// Arm bones move; torso bones stay at the T-pose.
std::vector<bool> movingBones(const Skeleton& skeleton) {
  std::vector<bool> moving(skeleton.boneCount(), false);
  for (std::size_t b = 0; b < skeleton.boneCount(); ++b) {
    const std::string& parent = skeleton.jointNames()[skeleton.bones()[b].parent];
    moving[b] = parent.find("shoulder") != std::string::npos || parent.find("elbow") != std::string::npos ||
        parent.find("wrist") != std::string::npos;
  }
  return moving;
}

std::vector<std::vector<BoneCurve>> glossPrimitives(const SynthSpec& spec, const Skeleton& skeleton) {
  std::mt19937_64 rng = stream(spec.seed, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> primary(0.35, 0.9);
  std::uniform_real_distribution<double> secondary(-0.35, 0.35);
  std::uniform_int_distribution<int> sign(0, 1);
  const std::vector<bool> moving = movingBones(skeleton);
  std::vector<std::vector<BoneCurve>> prims(spec.numGlosses);
  for (auto& prim : prims) {
    prim.resize(skeleton.boneCount());
    for (std::size_t b = 0; b < skeleton.boneCount(); ++b) {
      Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
      const double a1 = primary(rng) * (sign(rng) ? 1.0 : -1.0);
      const double a2 = secondary(rng);
      if (!moving[b]) {
        continue;
      }
      // Keep the axis away from the bone so the rotation visibly moves it.
      const Vec3& rest = skeleton.restDirections()[b];
      axis -= 0.8 * axis.dot(rest) * rest;
      prim[b] = {axis.normalized(), a1, a2};
    }
  }
  return prims;
}

PoseSequence synthMotion(
    std::span<const int> glosses,
    const std::vector<std::vector<BoneCurve>>& prims,
    const Skeleton& skeleton,
    std::size_t frames) {
  const std::size_t k = glosses.size();
  std::vector<PoseFrame> out;
  out.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t seg = std::min(k - 1, t * k / frames);
    const std::size_t start = (seg * frames + k - 1) / k;
    const std::size_t end = ((seg + 1) * frames + k - 1) / k;  // exclusive
    const std::size_t len = end - start;
    const double s = len > 1 ? static_cast<double>(t - start) / static_cast<double>(len - 1) : 0.0;
    const auto& prim = prims[static_cast<std::size_t>(glosses[seg])];

    PoseFrame frame(skeleton.jointCount(), Vec3::Zero());
    frame[skeleton.root()] = skeleton.tPose()[skeleton.root()];
    for (std::size_t b : skeleton.traversal()) {
      const Bone& bone = skeleton.bones()[b];
      Vec3 dir = skeleton.restDirections()[b];
      const BoneCurve& c = prim[b];
      const double angle =
          c.primary * std::sin(std::numbers::pi * s) + c.secondary * std::sin(2.0 * std::numbers::pi * s);
      if (c.axis.squaredNorm() > 0.0 && angle != 0.0) {
        dir = rotateVector(UnitQuaternion::fromAxisAngle(c.axis, angle), dir);
      }
      frame[bone.child] = frame[bone.parent] + skeleton.boneLengths()[b] * dir;
    }
    out.push_back(std::move(frame));
  }
  return PoseSequence(std::move(out));
}

} // namespace

void SynthSpec::validate() const {
  if (numSequences < 2) {
    throw std::invalid_argument("num_sequences must be at least 2");
  }
  if (framesPerSequence < 2) {
    throw std::invalid_argument("frames_per_sequence must be at least 2");
  }
  if (numGlosses < 1) {
    throw std::invalid_argument("num_glosses must be at least 1");
  }
  if (minGlossesPerSequence < 1 || minGlossesPerSequence > maxGlossesPerSequence) {
    throw std::invalid_argument("invalid glosses-per-sequence range");
  }
  if (maxGlossesPerSequence > framesPerSequence) {
    throw std::invalid_argument("more glosses per sequence than frames");
  }
  if (sentenceEmbeddingMode != "bag_of_gloss_projection") {
    throw std::invalid_argument(fmt::format("unknown sentence embedding mode '{}'", sentenceEmbeddingMode));
  }
}

ad::Tensor sentenceProjectionMatrix(const SynthSpec& spec) {
  std::mt19937_64 rng = stream(spec.seed, 3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ad::Tensor m(kSentenceEmbeddingDim, spec.numGlosses);
  for (double& v : m.values()) {
    v = gauss(rng);
  }
  return m;
}

std::vector<double> glossCountVector(std::span<const int> glosses, std::size_t numGlosses) {
  std::vector<double> counts(numGlosses, 0.0);
  for (int g : glosses) {
    counts.at(static_cast<std::size_t>(g)) += 1.0;
  }
  double n = 0.0;
  for (double c : counts) {
    n += c * c;
  }
  n = std::sqrt(n);
  if (n > 0.0) {
    for (double& c : counts) {
      c /= n;
    }
  }
  return counts;
}

Dataset synthDataset(const SynthSpec& spec) {
  spec.validate();
  Dataset ds{demoSkeleton(), {}, {}};
  for (std::size_t g = 0; g < spec.numGlosses; ++g) {
    ds.vocabulary.intern(fmt::format("G{}", g));
  }
  const auto prims = glossPrimitives(spec, ds.skeleton);
  const ad::Tensor projection = sentenceProjectionMatrix(spec);

  std::mt19937_64 rng = stream(spec.seed, 2);
  std::uniform_int_distribution<std::size_t> length(spec.minGlossesPerSequence, spec.maxGlossesPerSequence);
  std::uniform_int_distribution<int> token(0, static_cast<int>(spec.numGlosses) - 1);
  for (std::size_t i = 0; i < spec.numSequences; ++i) {
    std::vector<int> glosses(length(rng));
    for (int& g : glosses) {
      g = token(rng);
    }
    PoseSequence motion = normalizePoseSequence(
        synthMotion(glosses, prims, ds.skeleton, spec.framesPerSequence), ds.skeleton);

    const std::vector<double> counts = glossCountVector(glosses, spec.numGlosses);
    std::vector<double> embedding(kSentenceEmbeddingDim, 0.0);
    for (std::size_t r = 0; r < kSentenceEmbeddingDim; ++r) {
      for (std::size_t c = 0; c < spec.numGlosses; ++c) {
        embedding[r] += projection(r, c) * counts[c];
      }
    }
    ds.samples.push_back({fmt::format("s{:03}", i), std::move(motion), std::move(glosses), std::move(embedding)});
  }
  return ds;
}

} // namespace slp
