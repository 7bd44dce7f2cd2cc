#include "doctest.h"
#include "fixtures.h"

#include "slp/errors.h"
#include "slp/model.h"

#include <random>

using namespace slp;

namespace {

const Skeleton& skeleton() {
  static const Skeleton s = demoSkeleton();
  return s;
}

ad::Tensor randomFrames(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ad::Tensor t(rows, cols);
  for (double& v : t.values()) {
    v = u(rng);
  }
  return t;
}

} // namespace

TEST_CASE("frame widths follow the output mode") {
  const ModelConfig c = ModelConfig::toy(5, skeleton(), OutputMode::Cartesian);
  const ModelConfig q = ModelConfig::toy(5, skeleton(), OutputMode::Quaternion);
  CHECK(c.frameWidth() == 3 * 11 + 1);
  CHECK(q.frameWidth() == 4 * 10 + 3 + 1);

  for (OutputMode mode : {OutputMode::Cartesian, OutputMode::Quaternion}) {
    const Model m(ModelConfig::tiny(5, skeleton(), mode), 1);
    const std::vector<int> g{0, 3};
    const ad::Tensor memory = encodeGlosses(m, g);
    const StepResult r = decodeStep(m, ad::Tensor(1, m.config().frameWidth()), memory);
    CHECK(r.frame.size() == m.config().frameWidth());
    CHECK(r.latents.size() == m.config().numLayers);
  }
}

TEST_CASE("presets") {
  const ModelConfig toy = ModelConfig::toy(5, skeleton(), OutputMode::Quaternion);
  CHECK(toy.numLayers == 2);
  CHECK(toy.numHeads == 2);
  CHECK(toy.embedDim == 64);
  CHECK(toy.counterEnabled);
  const ModelConfig full = ModelConfig::fullScale(5, skeleton(), OutputMode::Quaternion);
  CHECK(full.numHeads == 4);
  CHECK(full.embedDim == 512);
  CHECK(full.feedforwardDim == 2048);
  ModelConfig bad = toy;
  bad.numHeads = 3;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("config json round trip") {
  const ModelConfig c = ModelConfig::tiny(7, skeleton(), OutputMode::Cartesian);
  const nlohmann::json j = c;
  CHECK(j.get<ModelConfig>() == c);
}

TEST_CASE("gloss encoder") {
  const Model m(ModelConfig::tiny(4, skeleton(), OutputMode::Quaternion), 2);
  CHECK_THROWS_WITH_AS(encodeGlosses(m, std::vector<int>{}), "empty gloss input", DataError);
  CHECK_THROWS_AS(encodeGlosses(m, std::vector<int>{4}), DataError);
  CHECK_THROWS_AS(encodeGlosses(m, std::vector<int>{-1}), DataError);
  const ad::Tensor one = encodeGlosses(m, std::vector<int>{2});
  CHECK(one.rows() == 1);
  CHECK(one.cols() == m.config().embedDim);
  CHECK(encodeGlosses(m, std::vector<int>{1, 2, 3}) == encodeGlosses(m, std::vector<int>{1, 2, 3}));
}

TEST_CASE("same seed gives the same weights") {
  const ModelConfig c = ModelConfig::tiny(4, skeleton(), OutputMode::Quaternion);
  CHECK(Model(c, 5).parameters() == Model(c, 5).parameters());
  CHECK(Model(c, 5).parameters() != Model(c, 6).parameters());
}

TEST_CASE("weights are validated against the config") {
  const ModelConfig c = ModelConfig::tiny(4, skeleton(), OutputMode::Quaternion);
  ParameterSet p = Model(c, 1).parameters();
  p.erase("proj.w");
  CHECK_THROWS_AS(Model(c, p), DataError);
  ParameterSet q = Model(c, 1).parameters();
  q["dec.out.b"] = ad::Tensor(1, 3);
  CHECK_THROWS_AS(Model(c, q), DataError);
}

TEST_CASE("decoder is causal") {
  const Model m(ModelConfig::tiny(4, skeleton(), OutputMode::Quaternion), 3);
  const std::size_t w = m.config().frameWidth();
  const ad::Tensor memory = encodeGlosses(m, std::vector<int>{0, 1});
  const ad::Tensor inputs = randomFrames(6, w, 10);
  ad::Tensor perturbed = inputs;
  for (std::size_t c = 0; c < w; ++c) {
    perturbed(4, c) += 0.5;
    perturbed(5, c) -= 0.3;
  }
  ad::Tape tape;
  ModelGraph g(m, tape, false);
  const ad::Var mem = tape.constant(memory);
  const ad::Tensor a = g.decode(tape.constant(inputs), mem).output.value();
  const ad::Tensor b = g.decode(tape.constant(perturbed), mem).output.value();
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t c = 0; c < w; ++c) {
      CHECK(a(t, c) == b(t, c));
    }
  }
  bool changed = false;
  for (std::size_t c = 0; c < w; ++c) {
    changed = changed || a(4, c) != b(4, c);
  }
  CHECK(changed);
}

TEST_CASE("teacher-forced pass equals stepwise decoding bitwise") {
  for (OutputMode mode : {OutputMode::Cartesian, OutputMode::Quaternion}) {
    const Model m(ModelConfig::toy(4, skeleton(), mode), 4);
    const std::size_t w = m.config().frameWidth();
    const ad::Tensor memory = encodeGlosses(m, std::vector<int>{3, 1, 2});
    const ad::Tensor inputs = randomFrames(9, w, 11);
    ad::Tape tape;
    ModelGraph g(m, tape, false);
    const DecoderPass full = g.decode(tape.constant(inputs), tape.constant(memory));
    for (std::size_t t = 0; t < inputs.rows(); ++t) {
      ad::Tensor history(t + 1, w);
      for (std::size_t r = 0; r <= t; ++r) {
        std::copy(inputs.row(r).begin(), inputs.row(r).end(), history.row(r).begin());
      }
      const StepResult step = decodeStep(m, history, memory);
      for (std::size_t c = 0; c < w; ++c) {
        CHECK(step.frame[c] == full.output.value()(t, c));
      }
      for (std::size_t l = 0; l < m.config().numLayers; ++l) {
        const auto expected = full.latents[l].value().row(t);
        CHECK(std::equal(expected.begin(), expected.end(), step.latents[l].values().begin()));
      }
    }
  }
}

TEST_CASE("history longer than max_frames is rejected") {
  const Model m(ModelConfig::tiny(4, skeleton(), OutputMode::Quaternion), 1);
  const ad::Tensor memory = encodeGlosses(m, std::vector<int>{0});
  CHECK_THROWS(decodeStep(m, ad::Tensor(m.config().maxFrames + 1, m.config().frameWidth()), memory));
}

TEST_CASE("zero output head never stops") {
  Model m(ModelConfig::tiny(4, skeleton(), OutputMode::Quaternion), 1);
  for (auto& [name, t] : m.parameters()) {
    if (name.starts_with("dec.out")) {
      t = ad::Tensor(t.rows(), t.cols());
    }
  }
  const Generation g = generate(m, std::vector<int>{0, 1});
  CHECK(g.truncated);
  CHECK(g.frames.rows() == m.config().maxFrames);
}

TEST_CASE("generation stops at the first counter over the threshold") {
  Model m(ModelConfig::tiny(4, skeleton(), OutputMode::Quaternion), 1);
  // counter output driven only by its bias
  const std::size_t counter = m.config().poseWidth();
  ad::Tensor& w = m.parameters().at("dec.out.w");
  for (std::size_t r = 0; r < w.rows(); ++r) {
    w(r, counter) = 0.0;
  }
  m.parameters().at("dec.out.b")(0, counter) = 2.0;
  const Generation g = generate(m, std::vector<int>{0});
  CHECK_FALSE(g.truncated);
  CHECK(g.frames.rows() == 1);
  CHECK(g.frames(0, counter) == 1.0);
  for (std::size_t b = 0; b < m.config().boneCount; ++b) {
    double n = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      n += g.frames(0, 4 * b + k) * g.frames(0, 4 * b + k);
    }
    CHECK(n == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(g.frames(0, 4 * b) >= 0.0);
  }
}

TEST_CASE("generation length is the first counter index") {
  const Model m(ModelConfig::tiny(4, skeleton(), OutputMode::Cartesian), 9);
  const Generation g = generate(m, std::vector<int>{2, 3});
  const std::size_t counter = m.config().poseWidth();
  for (std::size_t t = 0; t + 1 < g.frames.rows(); ++t) {
    CHECK(g.frames(t, counter) < kCounterStopThreshold);
  }
  if (!g.truncated) {
    CHECK(g.frames(g.frames.rows() - 1, counter) >= kCounterStopThreshold);
  }
}

TEST_CASE("projection head") {
  Model m(ModelConfig::tiny(4, skeleton(), OutputMode::Quaternion), 2);
  const std::size_t d = m.config().embedDim;

  SUBCASE("constant latents pool to that vector") {
    ad::Tape tape;
    ad::Tensor c(5, d);
    for (std::size_t t = 0; t < 5; ++t) {
      for (std::size_t k = 0; k < d; ++k) {
        c(t, k) = 0.25 * static_cast<double>(k) - 1.0;
      }
    }
    LatentStack stack{{{tape.constant(c)}}};
    const auto pooled = poolLatents(stack);
    for (std::size_t k = 0; k < d; ++k) {
      CHECK(pooled[0].value()(0, k) == doctest::Approx(c(0, k)).epsilon(1e-15));
    }
  }

  SUBCASE("zero weights give the bias") {
    m.parameters().at("proj.w") = ad::Tensor(d, kProjectionDim);
    ad::Tensor& b = m.parameters().at("proj.b");
    for (std::size_t k = 0; k < kProjectionDim; ++k) {
      b(0, k) = static_cast<double>(k);
    }
    ad::Tape tape;
    ModelGraph g(m, tape, false);
    LatentStack stack{{{tape.constant(randomFrames(3, d, 1)), tape.constant(randomFrames(4, d, 2))}}};
    const auto out = projectLatents(stack, g);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t k = 0; k < kProjectionDim; ++k) {
        CHECK(out[0].value()(r, k) == b(0, k));
      }
    }
  }

  SUBCASE("matches pooling plus affine recomputation") {
    ad::Tape tape;
    ModelGraph g(m, tape, false);
    const ad::Tensor a = randomFrames(3, d, 5);
    const ad::Tensor b = randomFrames(6, d, 6);
    LatentStack stack{{{tape.constant(a), tape.constant(b)}, {tape.constant(b), tape.constant(a)}}};
    const auto out = projectLatents(stack, g);
    REQUIRE(out.size() == 2);
    const ad::Tensor& w = m.parameters().at("proj.w");
    const ad::Tensor& bias = m.parameters().at("proj.b");
    const ad::Tensor* samples[2][2] = {{&a, &b}, {&b, &a}};
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t n = 0; n < 2; ++n) {
        const ad::Tensor& z = *samples[l][n];
        std::vector<double> pooled(d, 0.0);
        for (std::size_t t = 0; t < z.rows(); ++t) {
          for (std::size_t k = 0; k < d; ++k) {
            pooled[k] += z(t, k) / static_cast<double>(z.rows());
          }
        }
        for (std::size_t j = 0; j < kProjectionDim; ++j) {
          double v = bias(0, j);
          for (std::size_t k = 0; k < d; ++k) {
            v += pooled[k] * w(k, j);
          }
          CHECK(out[l].value()(n, j) == doctest::Approx(v).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("frame conversions") {
  std::mt19937_64 rng(3);
  const PoseSequence p = fixture::randomPoses(skeleton(), 4, rng);
  const ad::Tensor f = framesFromPoses(p, true);
  CHECK(f.cols() == 3 * 11 + 1);
  CHECK(f(0, 33) == 0.0);
  CHECK(f(3, 33) == 1.0);
  CHECK(posesFromFrames(f, 11) == p);

  const RotationSequence r = encode(p, skeleton());
  const ad::Tensor fr = framesFromRotations(r, true);
  const RotationSequence back = rotationsFromFrames(fr, 10);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(back.rootPositions()[t] == r.rootPositions()[t]);
    for (std::size_t b = 0; b < 10; ++b) {
      CHECK(geodesicDistance(back.quats()[t][b], r.quats()[t][b]) < 1e-12);
    }
  }

  const ad::Tensor in = teacherForcedInputs(f);
  for (std::size_t c = 0; c < f.cols(); ++c) {
    CHECK(in(0, c) == 0.0);
    CHECK(in(2, c) == f(1, c));
  }
}
