#pragma once

#include "slp/autodiff.h"
#include "slp/rotation.h"
#include "slp/skeleton.h"

#include <cstddef>
#include <span>
#include <vector>

namespace slp {

inline constexpr std::size_t kSentenceEmbeddingDim = 384;
inline constexpr double kDefaultTemperature = 1.0;
inline constexpr double kDefaultGlossLambda = 1e-4;
// Clamp margin for arccos in training losses. Metrics clamp exactly.
inline constexpr double kAcosEpsilon = 1e-7;

/// Gloss token ids of every sample in a batch, repetitions kept.
struct GlossBatchAnnotation {
  std::vector<std::vector<int>> glossSequences;

  std::size_t size() const {
    return glossSequences.size();
  }
};

/// N x 384 sentence embeddings, every row nonzero.
class SentenceEmbeddingBatch {
 public:
  explicit SentenceEmbeddingBatch(ad::Tensor embeddings);

  std::size_t size() const {
    return embeddings_.rows();
  }
  const ad::Tensor& embeddings() const {
    return embeddings_;
  }

 private:
  ad::Tensor embeddings_;
};

// Plain evaluations on domain types.

double mseJoints(const PoseSequence& pred, const PoseSequence& gt);
double geodesicLoss(const RotationSequence& pred, const RotationSequence& gt);
double rootLoss(std::span<const Vec3> predRoot, std::span<const Vec3> gtRoot);
double cosineSimilarity(std::span<const double> x, std::span<const double> y);

/// Gloss-supervised contrastive loss of one layer. `latents` holds one
/// sequence-level row per sample.
double glossSupConLayer(const ad::Tensor& latents, const GlossBatchAnnotation& annotation, double tau);
double glossSupCon(std::span<const ad::Tensor> layers, const GlossBatchAnnotation& annotation, double tau);

/// Mean over pairs i < j of (sim(g_i, g_j) - sim(s_i, s_j))^2.
double sbertSupConLayer(const ad::Tensor& projected, const SentenceEmbeddingBatch& sentences);
double sbertSupCon(std::span<const ad::Tensor> layers, const SentenceEmbeddingBatch& sentences);

double totalLoss(double slpLoss, double contrastiveLoss, double lambda);

// Differentiable forms. Pose and rotation inputs are flattened per frame:
// joints as T x (3 * joints), rotations as T x (4 * bones) with (w, x, y, z)
// blocks, roots as T x 3.
namespace tape {

ad::Var mseJoints(ad::Var pred, ad::Var gt);
// Predicted quaternion blocks are renormalized before comparison.
ad::Var geodesicLoss(ad::Var predQuats, ad::Var gtQuats, double eps = kAcosEpsilon);
ad::Var rootLoss(ad::Var predRoot, ad::Var gtRoot);
ad::Var glossSupConLayer(ad::Var latents, const GlossBatchAnnotation& annotation, double tau);
ad::Var glossSupCon(std::span<const ad::Var> layers, const GlossBatchAnnotation& annotation, double tau);
ad::Var sbertSupConLayer(ad::Var projected, const SentenceEmbeddingBatch& sentences);
ad::Var sbertSupCon(std::span<const ad::Var> layers, const SentenceEmbeddingBatch& sentences);
ad::Var totalLoss(ad::Var slpLoss, ad::Var contrastiveLoss, double lambda);

} // namespace tape

// Flattening helpers shared with the model and trainer.
ad::Tensor flattenPoses(const PoseSequence& seq);
ad::Tensor flattenQuats(const RotationSequence& rots);
ad::Tensor flattenRoots(const RotationSequence& rots);

} // namespace slp
