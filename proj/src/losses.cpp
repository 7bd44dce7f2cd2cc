#include "slp/losses.h"

#include "slp/errors.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace slp {

namespace {

struct Anchor {
  std::size_t reference;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

// One entry per distinct gloss in ascending id order, skipping glosses whose
// positive or negative set is empty.
std::vector<Anchor> glossAnchors(const GlossBatchAnnotation& annotation) {
  const std::size_t n = annotation.size();
  std::map<int, std::vector<std::size_t>> counts;
  for (std::size_t k = 0; k < n; ++k) {
    for (int g : annotation.glossSequences[k]) {
      auto& c = counts[g];
      c.resize(n, 0);
      ++c[k];
    }
  }
  std::vector<Anchor> anchors;
  for (const auto& [gloss, c] : counts) {
    // max_element returns the first maximum, i.e. the lowest index on ties.
    const std::size_t ref = static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin());
    Anchor a{ref, {}, {}};
    for (std::size_t k = 0; k < n; ++k) {
      if (c[k] == 0) {
        a.negatives.push_back(k);
      } else if (k != ref) {
        a.positives.push_back(k);
      }
    }
    if (!a.positives.empty() && !a.negatives.empty()) {
      anchors.push_back(std::move(a));
    }
  }
  return anchors;
}

void requireSameShape(const ad::Var& a, const ad::Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DataError(fmt::format(
        "{}: shape mismatch {}x{} vs {}x{}", what, a.rows(), a.cols(), b.rows(), b.cols()));
  }
}

// Cosine similarity matrix using the same operation order as
// normalizeRows followed by matmul, so matched inputs cancel exactly.
ad::Tensor similarityMatrix(const ad::Tensor& rows) {
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  ad::Tensor unit(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : rows.row(i)) {
      s += v * v;
    }
    const double norm = std::sqrt(s);
    for (std::size_t c = 0; c < d; ++c) {
      unit(i, c) = rows(i, c) / norm;
    }
  }
  ad::Tensor sims(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        s += unit(i, c) * unit(j, c);
      }
      sims(i, j) = s;
    }
  }
  return sims;
}

template <class F>
double evaluateOnTape(F&& build) {
  ad::Tape t;
  return build(t).value().item();
}

} // namespace

SentenceEmbeddingBatch::SentenceEmbeddingBatch(ad::Tensor embeddings)
    : embeddings_(std::move(embeddings)) {
  if (embeddings_.cols() != kSentenceEmbeddingDim) {
    throw DataError(fmt::format(
        "sentence embeddings must have {} columns, got {}", kSentenceEmbeddingDim, embeddings_.cols()));
  }
  for (std::size_t r = 0; r < embeddings_.rows(); ++r) {
    double s = 0.0;
    for (double v : embeddings_.row(r)) {
      s += v * v;
    }
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw DataError(fmt::format("sentence embedding row {} has zero or non-finite norm", r));
    }
  }
}

ad::Tensor flattenPoses(const PoseSequence& seq) {
  ad::Tensor out(seq.frameCount(), 3 * seq.jointCount());
  for (std::size_t t = 0; t < seq.frameCount(); ++t) {
    for (std::size_t j = 0; j < seq.jointCount(); ++j) {
      for (int d = 0; d < 3; ++d) {
        out(t, 3 * j + d) = seq.frame(t)[j][d];
      }
    }
  }
  return out;
}

ad::Tensor flattenQuats(const RotationSequence& rots) {
  ad::Tensor out(rots.frameCount(), 4 * rots.boneCount());
  for (std::size_t t = 0; t < rots.frameCount(); ++t) {
    for (std::size_t b = 0; b < rots.boneCount(); ++b) {
      const auto c = rots.quats()[t][b].coeffs();
      for (int d = 0; d < 4; ++d) {
        out(t, 4 * b + d) = c[d];
      }
    }
  }
  return out;
}

ad::Tensor flattenRoots(const RotationSequence& rots) {
  ad::Tensor out(rots.frameCount(), 3);
  for (std::size_t t = 0; t < rots.frameCount(); ++t) {
    for (int d = 0; d < 3; ++d) {
      out(t, d) = rots.rootPositions()[t][d];
    }
  }
  return out;
}

double mseJoints(const PoseSequence& pred, const PoseSequence& gt) {
  if (pred.frameCount() != gt.frameCount() || pred.jointCount() != gt.jointCount()) {
    throw DataError(fmt::format(
        "mse_joints: shapes {}x{} and {}x{} differ",
        pred.frameCount(),
        pred.jointCount(),
        gt.frameCount(),
        gt.jointCount()));
  }
  double s = 0.0;
  for (std::size_t t = 0; t < gt.frameCount(); ++t) {
    for (std::size_t j = 0; j < gt.jointCount(); ++j) {
      s += (pred.frame(t)[j] - gt.frame(t)[j]).squaredNorm();
    }
  }
  return s / static_cast<double>(gt.frameCount() * gt.jointCount());
}

double geodesicLoss(const RotationSequence& pred, const RotationSequence& gt) {
  if (pred.frameCount() != gt.frameCount() || pred.boneCount() != gt.boneCount()) {
    throw DataError(fmt::format(
        "geodesic_loss: shapes {}x{} and {}x{} differ",
        pred.frameCount(),
        pred.boneCount(),
        gt.frameCount(),
        gt.boneCount()));
  }
  double s = 0.0;
  for (std::size_t t = 0; t < gt.frameCount(); ++t) {
    for (std::size_t b = 0; b < gt.boneCount(); ++b) {
      s += geodesicDistance(pred.quats()[t][b], gt.quats()[t][b]);
    }
  }
  return s / static_cast<double>(gt.frameCount() * gt.boneCount());
}

double rootLoss(std::span<const Vec3> predRoot, std::span<const Vec3> gtRoot) {
  if (predRoot.size() != gtRoot.size() || gtRoot.empty()) {
    throw DataError(fmt::format(
        "root_loss: trajectory lengths {} and {} differ or are empty", predRoot.size(), gtRoot.size()));
  }
  double s = 0.0;
  for (std::size_t t = 0; t < gtRoot.size(); ++t) {
    s += (predRoot[t] - gtRoot[t]).squaredNorm();
  }
  return s / static_cast<double>(gtRoot.size());
}

double cosineSimilarity(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DataError("cosine_similarity: length mismatch");
  }
  double xy = 0.0;
  double xx = 0.0;
  double yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xy += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  if (!(xx > 0.0) || !(yy > 0.0)) {
    throw DataError("cosine_similarity: zero-norm input");
  }
  return xy / (std::sqrt(xx) * std::sqrt(yy));
}

double glossSupConLayer(const ad::Tensor& latents, const GlossBatchAnnotation& annotation, double tau) {
  return evaluateOnTape([&](ad::Tape& t) {
    return tape::glossSupConLayer(t.constant(latents), annotation, tau);
  });
}

double glossSupCon(std::span<const ad::Tensor> layers, const GlossBatchAnnotation& annotation, double tau) {
  return evaluateOnTape([&](ad::Tape& t) {
    std::vector<ad::Var> vars;
    for (const ad::Tensor& l : layers) {
      vars.push_back(t.constant(l));
    }
    return tape::glossSupCon(vars, annotation, tau);
  });
}

double sbertSupConLayer(const ad::Tensor& projected, const SentenceEmbeddingBatch& sentences) {
  return evaluateOnTape([&](ad::Tape& t) {
    return tape::sbertSupConLayer(t.constant(projected), sentences);
  });
}

double sbertSupCon(std::span<const ad::Tensor> layers, const SentenceEmbeddingBatch& sentences) {
  return evaluateOnTape([&](ad::Tape& t) {
    std::vector<ad::Var> vars;
    for (const ad::Tensor& l : layers) {
      vars.push_back(t.constant(l));
    }
    return tape::sbertSupCon(vars, sentences);
  });
}

double totalLoss(double slpLoss, double contrastiveLoss, double lambda) {
  if (lambda < 0.0) {
    throw std::invalid_argument("lambda must be non-negative");
  }
  return slpLoss + lambda * contrastiveLoss;
}

namespace tape {

ad::Var mseJoints(ad::Var pred, ad::Var gt) {
  requireSameShape(pred, gt, "mse_joints");
  if (gt.cols() % 3 != 0) {
    throw DataError("mse_joints: column count is not a multiple of 3");
  }
  const double count = static_cast<double>(gt.rows() * (gt.cols() / 3));
  return ad::scale(ad::sum(ad::square(ad::sub(pred, gt))), 1.0 / count);
}

ad::Var geodesicLoss(ad::Var predQuats, ad::Var gtQuats, double eps) {
  requireSameShape(predQuats, gtQuats, "geodesic_loss");
  if (gtQuats.cols() % 4 != 0) {
    throw DataError("geodesic_loss: column count is not a multiple of 4");
  }
  const std::size_t blocks = gtQuats.rows() * (gtQuats.cols() / 4);
  const ad::Var pred = ad::normalizeRows(ad::reshape(predQuats, blocks, 4));
  const ad::Var gt = ad::reshape(gtQuats, blocks, 4);
  const ad::Var d = ad::quatRowDot(pred, gt);
  const ad::Var cosAngle = ad::addScalar(ad::scale(ad::square(d), 2.0), -1.0);
  return ad::mean(ad::acosClamped(cosAngle, eps));
}

ad::Var rootLoss(ad::Var predRoot, ad::Var gtRoot) {
  requireSameShape(predRoot, gtRoot, "root_loss");
  if (gtRoot.cols() != 3) {
    throw DataError("root_loss: trajectories must be T x 3");
  }
  return ad::scale(ad::sum(ad::square(ad::sub(predRoot, gtRoot))), 1.0 / static_cast<double>(gtRoot.rows()));
}

ad::Var glossSupConLayer(ad::Var latents, const GlossBatchAnnotation& annotation, double tau) {
  if (!(tau > 0.0)) {
    throw std::invalid_argument("gloss contrastive loss needs tau > 0");
  }
  if (latents.rows() != annotation.size()) {
    throw DataError(fmt::format(
        "gloss contrastive loss: {} latent rows for {} annotated samples", latents.rows(), annotation.size()));
  }
  ad::Tape& t = latents.tape();
  const std::vector<Anchor> anchors = glossAnchors(annotation);
  if (anchors.empty()) {
    return t.constant(ad::Tensor::scalar(0.0));
  }
  const ad::Var sims = ad::scale(ad::matmul(latents, ad::transpose(latents)), 1.0 / tau);
  std::vector<ad::Var> terms;
  for (const Anchor& a : anchors) {
    std::vector<std::pair<std::size_t, std::size_t>> pos;
    std::vector<std::pair<std::size_t, std::size_t>> negs;
    for (std::size_t k : a.positives) {
      pos.emplace_back(a.reference, k);
    }
    for (std::size_t k : a.negatives) {
      negs.emplace_back(a.reference, k);
    }
    // -log(mean_a exp(s_fa) / sum_b exp(s_fb))
    const ad::Var logMeanPos =
        ad::addScalar(ad::logSumExp(ad::gather(sims, pos)), -std::log(static_cast<double>(pos.size())));
    terms.push_back(ad::sub(ad::logSumExp(ad::gather(sims, negs)), logMeanPos));
  }
  return ad::sum(ad::concatRows(terms));
}

ad::Var glossSupCon(std::span<const ad::Var> layers, const GlossBatchAnnotation& annotation, double tau) {
  if (layers.empty()) {
    throw std::invalid_argument("gloss contrastive loss: empty latent stack");
  }
  std::vector<ad::Var> perLayer;
  for (const ad::Var& l : layers) {
    perLayer.push_back(glossSupConLayer(l, annotation, tau));
  }
  return ad::mean(ad::concatRows(perLayer));
}

ad::Var sbertSupConLayer(ad::Var projected, const SentenceEmbeddingBatch& sentences) {
  const std::size_t n = projected.rows();
  if (n < 2) {
    throw DataError("sentence contrastive loss needs at least 2 samples");
  }
  if (n != sentences.size() || projected.cols() != sentences.embeddings().cols()) {
    throw DataError(fmt::format(
        "sentence contrastive loss: projected {}x{} vs embeddings {}x{}",
        n,
        projected.cols(),
        sentences.size(),
        sentences.embeddings().cols()));
  }
  ad::Tape& t = projected.tape();
  // Target similarity matrix, diagonal masked out.
  ad::Tensor target = similarityMatrix(sentences.embeddings());
  ad::Tensor offDiagonal(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    offDiagonal(i, i) = 0.0;
  }
  const ad::Var g = ad::normalizeRows(projected);
  const ad::Var sims = ad::matmul(g, ad::transpose(g));
  const ad::Var diff = ad::mul(ad::sub(sims, t.constant(std::move(target))), t.constant(std::move(offDiagonal)));
  // Every unordered pair appears twice in the full matrix.
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(n * (n - 1)));
}

ad::Var sbertSupCon(std::span<const ad::Var> layers, const SentenceEmbeddingBatch& sentences) {
  if (layers.empty()) {
    throw std::invalid_argument("sentence contrastive loss: empty latent stack");
  }
  std::vector<ad::Var> perLayer;
  for (const ad::Var& l : layers) {
    perLayer.push_back(sbertSupConLayer(l, sentences));
  }
  return ad::mean(ad::concatRows(perLayer));
}

ad::Var totalLoss(ad::Var slpLoss, ad::Var contrastiveLoss, double lambda) {
  if (lambda < 0.0) {
    throw std::invalid_argument("lambda must be non-negative");
  }
  return ad::add(slpLoss, ad::scale(contrastiveLoss, lambda));
}

} // namespace tape

} // namespace slp
