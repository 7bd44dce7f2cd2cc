#include "doctest.h"
#include "fixtures.h"
#include "oracles.h"

#include "slp/errors.h"
#include "slp/losses.h"

#include <cmath>
#include <numbers>
#include <random>

using namespace slp;

namespace {

ad::Tensor toTensor(const oracle::Matrix& m) {
  ad::Tensor t(m.size(), m.front().size());
  for (std::size_t r = 0; r < m.size(); ++r) {
    for (std::size_t c = 0; c < m[r].size(); ++c) {
      t(r, c) = m[r][c];
    }
  }
  return t;
}

oracle::Matrix randomMatrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  oracle::Matrix m(r, std::vector<double>(c));
  for (auto& row : m) {
    for (double& v : row) {
      v = n(rng);
    }
  }
  return m;
}

RotationSequence singleBone(std::vector<double> anglesAboutZ) {
  std::vector<std::vector<UnitQuaternion>> q;
  std::vector<Vec3> roots;
  for (double a : anglesAboutZ) {
    q.push_back({UnitQuaternion::fromAxisAngle(Vec3(0, 0, 1), a)});
    roots.emplace_back(0, 0, 0);
  }
  return {q, roots};
}

} // namespace

TEST_CASE("joint mse") {
  const Skeleton s = demoSkeleton();
  std::mt19937_64 rng(2);
  const PoseSequence a = fixture::randomPoses(s, 5, rng);
  CHECK(mseJoints(a, a) == 0.0);

  std::vector<PoseFrame> shifted = a.frames();
  for (auto& f : shifted) {
    for (Vec3& p : f) {
      p += Vec3(1, 0, 0);
    }
  }
  CHECK(mseJoints(PoseSequence(shifted), a) == doctest::Approx(1.0).epsilon(1e-12));

  const PoseSequence b = fixture::randomPoses(s, 5, rng);
  double total = 0.0;
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t j = 0; j < s.jointCount(); ++j) {
      for (int k = 0; k < 3; ++k) {
        const double d = a.frame(t)[j][k] - b.frame(t)[j][k];
        total += d * d;
      }
    }
  }
  CHECK(mseJoints(a, b) == doctest::Approx(total / (5.0 * s.jointCount())).epsilon(1e-12));
  CHECK_THROWS_AS(mseJoints(a, fixture::randomPoses(s, 4, rng)), DataError);
}

TEST_CASE("geodesic loss") {
  const RotationSequence z = singleBone({0.0});
  CHECK(geodesicLoss(z, z) == 0.0);
  CHECK(geodesicLoss(singleBone({std::numbers::pi / 2}), z) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-12));
  CHECK(geodesicLoss(singleBone({std::numbers::pi / 2, 0.0}), singleBone({0.0, 0.0})) ==
        doctest::Approx(std::numbers::pi / 4).epsilon(1e-12));
  CHECK_THROWS_AS(geodesicLoss(singleBone({0.0, 0.0}), z), DataError);
}

TEST_CASE("root loss") {
  const std::vector<Vec3> a{Vec3(0, 0, 0), Vec3(1, 2, 3)};
  CHECK(rootLoss(a, a) == 0.0);
  const std::vector<Vec3> b{Vec3(1, 0, 0), Vec3(2, 2, 3)};
  CHECK(rootLoss(b, a) == doctest::Approx(1.0));
  const std::vector<Vec3> c{Vec3(3, 4, 0), Vec3(4, 6, 3)};
  CHECK(rootLoss(c, a) == doctest::Approx(25.0));
  CHECK_THROWS_AS(rootLoss(std::vector<Vec3>{Vec3(0, 0, 0)}, a), DataError);
}

TEST_CASE("gloss contrastive worked example") {
  // samples {A,B}, {A}, {B}
  GlossBatchAnnotation ann{{{0, 1}, {0}, {1}}};
  const ad::Tensor z(3, 2, {1, 0, 1, 0, 0, 1});
  CHECK(glossSupConLayer(z, ann, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(oracle::glossSupCon({{1, 0}, {1, 0}, {0, 1}}, ann.glossSequences, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("gloss contrastive with every gloss everywhere is zero") {
  GlossBatchAnnotation ann{{{0, 1}, {1, 0}, {0, 1, 1}}};
  std::mt19937_64 rng(4);
  CHECK(glossSupConLayer(toTensor(randomMatrix(3, 4, rng)), ann, 0.5) == 0.0);
}

TEST_CASE("gloss contrastive matches direct summation") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> gloss(0, 4);
  std::uniform_int_distribution<int> len(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    GlossBatchAnnotation ann;
    for (int i = 0; i < 6; ++i) {
      std::vector<int> g;
      for (int k = len(rng); k > 0; --k) {
        g.push_back(gloss(rng));
      }
      ann.glossSequences.push_back(g);
    }
    const oracle::Matrix z = randomMatrix(6, 4, rng);
    const double tau = 0.5 + 0.1 * trial;
    const double expected = oracle::glossSupCon(z, ann.glossSequences, tau);
    CHECK(glossSupConLayer(toTensor(z), ann, tau) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("gloss contrastive averages over layers") {
  std::mt19937_64 rng(12);
  GlossBatchAnnotation ann{{{0, 1}, {0}, {1, 2}, {2}}};
  const ad::Tensor a = toTensor(randomMatrix(4, 3, rng));
  const ad::Tensor b = toTensor(randomMatrix(4, 3, rng));
  const double la = glossSupConLayer(a, ann, 1.0);
  const double lb = glossSupConLayer(b, ann, 1.0);
  const ad::Tensor one[] = {a};
  const ad::Tensor two[] = {a, b};
  const ad::Tensor same[] = {a, a, a};
  CHECK(glossSupCon(one, ann, 1.0) == la);
  CHECK(glossSupCon(two, ann, 1.0) == doctest::Approx((la + lb) / 2).epsilon(1e-15));
  CHECK(glossSupCon(same, ann, 1.0) == doctest::Approx(la).epsilon(1e-15));
  CHECK_THROWS(glossSupCon(std::span<const ad::Tensor>{}, ann, 1.0));
}

TEST_CASE("cosine similarity") {
  const std::vector<double> x{1, 2, 3};
  const std::vector<double> y{-1, -2, -3};
  const std::vector<double> o{0, 3, -2};
  CHECK(cosineSimilarity(x, x) == doctest::Approx(1.0));
  CHECK(cosineSimilarity(x, o) == 0.0);
  CHECK(cosineSimilarity(x, y) == doctest::Approx(-1.0));
  CHECK_THROWS(cosineSimilarity(x, std::vector<double>{0, 0, 0}));
}

TEST_CASE("sentence contrastive") {
  std::mt19937_64 rng(6);
  const oracle::Matrix e = randomMatrix(5, kSentenceEmbeddingDim, rng);
  const SentenceEmbeddingBatch batch(toTensor(e));
  CHECK(sbertSupConLayer(toTensor(e), batch) == 0.0);

  ad::Tensor orth(2, kSentenceEmbeddingDim);
  orth(0, 0) = 1.0;
  orth(1, 1) = 1.0;
  ad::Tensor same(2, kSentenceEmbeddingDim, 0.5);
  CHECK(sbertSupConLayer(orth, SentenceEmbeddingBatch(same)) == doctest::Approx(1.0).epsilon(1e-12));

  for (int trial = 0; trial < 10; ++trial) {
    const oracle::Matrix g = randomMatrix(5, kSentenceEmbeddingDim, rng);
    const oracle::Matrix s = randomMatrix(5, kSentenceEmbeddingDim, rng);
    CHECK(sbertSupConLayer(toTensor(g), SentenceEmbeddingBatch(toTensor(s))) ==
          doctest::Approx(oracle::sbertSupCon(g, s)).epsilon(1e-9));
  }

  const ad::Tensor a = toTensor(randomMatrix(5, kSentenceEmbeddingDim, rng));
  const ad::Tensor b = toTensor(randomMatrix(5, kSentenceEmbeddingDim, rng));
  const double la = sbertSupConLayer(a, batch);
  const double lb = sbertSupConLayer(b, batch);
  const ad::Tensor one[] = {a};
  const ad::Tensor two[] = {a, b};
  CHECK(sbertSupCon(one, batch) == la);
  CHECK(sbertSupCon(two, batch) == doctest::Approx((la + lb) / 2).epsilon(1e-15));
}

TEST_CASE("sentence embedding batch validation") {
  CHECK_THROWS(SentenceEmbeddingBatch(ad::Tensor(2, 383, 1.0)));
  CHECK_THROWS(SentenceEmbeddingBatch(ad::Tensor(2, kSentenceEmbeddingDim)));
  CHECK_THROWS(sbertSupConLayer(ad::Tensor(1, kSentenceEmbeddingDim, 1.0), SentenceEmbeddingBatch(ad::Tensor(1, kSentenceEmbeddingDim, 1.0))));
}

TEST_CASE("total loss") {
  CHECK(totalLoss(2.0, 3.0, 0.0) == 2.0);
  CHECK(totalLoss(2.0, 3.0, 1e-4) == doctest::Approx(2.0003).epsilon(1e-15));
  CHECK(kDefaultGlossLambda == 1e-4);
  CHECK_THROWS(totalLoss(2.0, 3.0, -1.0));
}

TEST_CASE("tape losses match plain losses and have correct gradients") {
  const Skeleton s = demoSkeleton();
  std::mt19937_64 rng(31);
  const PoseSequence pa = fixture::randomPoses(s, 3, rng);
  const PoseSequence pb = fixture::randomPoses(s, 3, rng);
  const RotationSequence ra = encode(pa, s);
  const RotationSequence rb = encode(pb, s);
  {
    ad::Tape tape;
    const ad::Var v = tape::mseJoints(tape.constant(flattenPoses(pa)), tape.constant(flattenPoses(pb)));
    CHECK(v.value().item() == doctest::Approx(mseJoints(pa, pb)).epsilon(1e-12));
  }
  {
    ad::Tape tape;
    const ad::Var v = tape::geodesicLoss(tape.constant(flattenQuats(ra)), tape.constant(flattenQuats(rb)));
    CHECK(v.value().item() == doctest::Approx(geodesicLoss(ra, rb)).epsilon(1e-9));
    const ad::Var r = tape::rootLoss(tape.constant(flattenRoots(ra)), tape.constant(flattenRoots(rb)));
    CHECK(r.value().item() == doctest::Approx(rootLoss(ra.rootPositions(), rb.rootPositions())).epsilon(1e-12));
  }

  const auto gradError = [](const ad::Tensor& x0, const std::function<ad::Var(ad::Var)>& f) {
    ad::Tape tape;
    const ad::Var x = tape.variable(x0);
    tape.backward(f(x));
    const ad::Tensor numeric = ad::numericGradient(
        [&](const ad::Tensor& p) {
          ad::Tape t;
          return f(t.constant(p)).value().item();
        },
        x0,
        1e-5);
    return ad::maxRelativeError(x.grad(), numeric);
  };
  const ad::Tensor qa = flattenQuats(ra);
  const ad::Tensor qb = flattenQuats(rb);
  CHECK(gradError(qa, [&](ad::Var x) { return tape::geodesicLoss(x, x.tape().constant(qb)); }) <= 1e-4);
  CHECK(gradError(flattenPoses(pa), [&](ad::Var x) { return tape::mseJoints(x, x.tape().constant(flattenPoses(pb))); }) <= 1e-4);

  GlossBatchAnnotation ann{{{0, 1}, {0}, {1, 2}, {2, 0}}};
  const ad::Tensor z = toTensor(randomMatrix(4, 5, rng));
  CHECK(gradError(z, [&](ad::Var x) { return tape::glossSupConLayer(x, ann, 0.7); }) <= 1e-4);
  const SentenceEmbeddingBatch sb(toTensor(randomMatrix(4, kSentenceEmbeddingDim, rng)));
  const ad::Tensor g = toTensor(randomMatrix(4, kSentenceEmbeddingDim, rng));
  CHECK(gradError(g, [&](ad::Var x) { return tape::sbertSupConLayer(x, sb); }) <= 1e-4);
}
