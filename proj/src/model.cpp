#include "slp/model.h"

#include "slp/errors.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace slp {

std::string toString(OutputMode mode) {
  return mode == OutputMode::Cartesian ? "cartesian" : "quaternion";
}

OutputMode outputModeFromString(const std::string& name) {
  if (name == "cartesian") {
    return OutputMode::Cartesian;
  }
  if (name == "quaternion") {
    return OutputMode::Quaternion;
  }
  throw std::invalid_argument(fmt::format("unknown output mode '{}'", name));
}

ModelConfig ModelConfig::toy(std::size_t vocabSize, const Skeleton& skeleton, OutputMode mode) {
  ModelConfig c;
  c.vocabSize = vocabSize;
  c.outputMode = mode;
  c.jointCount = skeleton.jointCount();
  c.boneCount = skeleton.boneCount();
  return c;
}

ModelConfig ModelConfig::fullScale(std::size_t vocabSize, const Skeleton& skeleton, OutputMode mode) {
  ModelConfig c = toy(vocabSize, skeleton, mode);
  c.numHeads = 4;
  c.embedDim = 512;
  c.feedforwardDim = 2048;
  c.maxFrames = 300;
  return c;
}

ModelConfig ModelConfig::tiny(std::size_t vocabSize, const Skeleton& skeleton, OutputMode mode) {
  ModelConfig c = toy(vocabSize, skeleton, mode);
  c.numHeads = 2;
  c.embedDim = 8;
  c.feedforwardDim = 12;
  c.maxFrames = 16;
  return c;
}

void ModelConfig::validate() const {
  if (numLayers == 0 || numHeads == 0 || embedDim == 0 || feedforwardDim == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (embedDim % numHeads != 0) {
    throw std::invalid_argument(
        fmt::format("embed_dim {} is not divisible by num_heads {}", embedDim, numHeads));
  }
  if (maxFrames < 1) {
    throw std::invalid_argument("max_frames must be at least 1");
  }
  if (vocabSize == 0) {
    throw std::invalid_argument("vocab_size must be positive");
  }
  if (dropoutRate < 0.0 || dropoutRate >= 1.0) {
    throw std::invalid_argument("dropout_rate must be in [0, 1)");
  }
  if (outputMode == OutputMode::Cartesian ? jointCount == 0 : boneCount == 0) {
    throw std::invalid_argument("model config has no skeleton layout");
  }
}

std::size_t ModelConfig::poseWidth() const {
  return outputMode == OutputMode::Cartesian ? 3 * jointCount : 4 * boneCount + 3;
}

std::size_t ModelConfig::frameWidth() const {
  return poseWidth() + (counterEnabled ? 1 : 0);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"num_layers", c.numLayers},
      {"num_heads", c.numHeads},
      {"embed_dim", c.embedDim},
      {"feedforward_dim", c.feedforwardDim},
      {"vocab_size", c.vocabSize},
      {"output_mode", toString(c.outputMode)},
      {"max_frames", c.maxFrames},
      {"dropout_rate", c.dropoutRate},
      {"counter_enabled", c.counterEnabled},
      {"joint_count", c.jointCount},
      {"bone_count", c.boneCount}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.numLayers = j.at("num_layers").get<std::size_t>();
  c.numHeads = j.at("num_heads").get<std::size_t>();
  c.embedDim = j.at("embed_dim").get<std::size_t>();
  c.feedforwardDim = j.at("feedforward_dim").get<std::size_t>();
  c.vocabSize = j.at("vocab_size").get<std::size_t>();
  c.outputMode = outputModeFromString(j.at("output_mode").get<std::string>());
  c.maxFrames = j.at("max_frames").get<std::size_t>();
  c.dropoutRate = j.at("dropout_rate").get<double>();
  c.counterEnabled = j.at("counter_enabled").get<bool>();
  c.jointCount = j.at("joint_count").get<std::size_t>();
  c.boneCount = j.at("bone_count").get<std::size_t>();
}

namespace {

ad::Tensor xavier(std::size_t fanIn, std::size_t fanOut, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fanIn + fanOut));
  std::uniform_real_distribution<double> dist(-limit, limit);
  ad::Tensor t(fanIn, fanOut);
  for (double& v : t.values()) {
    v = dist(rng);
  }
  return t;
}

void addLinear(ParameterSet& p, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  p[name + ".w"] = xavier(in, out, rng);
  p[name + ".b"] = ad::Tensor(1, out);
}

void addNorm(ParameterSet& p, const std::string& name, std::size_t dim) {
  p[name + ".g"] = ad::Tensor(1, dim, 1.0);
  p[name + ".b"] = ad::Tensor(1, dim);
}

void addAttention(ParameterSet& p, const std::string& name, std::size_t dim, std::mt19937_64& rng) {
  for (const char* part : {".q", ".k", ".v", ".o"}) {
    addLinear(p, name + part, dim, dim, rng);
  }
}

ad::Tensor sinusoidalPositions(std::size_t length, std::size_t dim) {
  ad::Tensor pe(length, dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) / rate;
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ad::Tensor causalMask(std::size_t length) {
  ad::Tensor mask(length, length);
  for (std::size_t r = 0; r < length; ++r) {
    for (std::size_t c = r + 1; c < length; ++c) {
      mask(r, c) = -std::numeric_limits<double>::infinity();
    }
  }
  return mask;
}

std::string layerName(const char* stack, std::size_t l) {
  return fmt::format("{}.{}", stack, l);
}

} // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.embedDim;
  const std::size_t ff = config_.feedforwardDim;
  parameters_["enc.embed"] = xavier(config_.vocabSize, d, rng);
  for (std::size_t l = 0; l < config_.numLayers; ++l) {
    const std::string n = layerName("enc", l);
    addAttention(parameters_, n + ".self", d, rng);
    addNorm(parameters_, n + ".ln1", d);
    addLinear(parameters_, n + ".ff1", d, ff, rng);
    addLinear(parameters_, n + ".ff2", ff, d, rng);
    addNorm(parameters_, n + ".ln2", d);
  }
  addLinear(parameters_, "dec.in", config_.frameWidth(), d, rng);
  for (std::size_t l = 0; l < config_.numLayers; ++l) {
    const std::string n = layerName("dec", l);
    addAttention(parameters_, n + ".self", d, rng);
    addNorm(parameters_, n + ".ln1", d);
    addAttention(parameters_, n + ".cross", d, rng);
    addNorm(parameters_, n + ".ln2", d);
    addLinear(parameters_, n + ".ff1", d, ff, rng);
    addLinear(parameters_, n + ".ff2", ff, d, rng);
    addNorm(parameters_, n + ".ln3", d);
  }
  addLinear(parameters_, "dec.out", d, config_.frameWidth(), rng);
  addLinear(parameters_, "proj", d, kProjectionDim, rng);
}

Model::Model(ModelConfig config, ParameterSet parameters)
    : config_(config), parameters_(std::move(parameters)) {
  config_.validate();
  const Model reference(config_, 0);
  for (const auto& [name, t] : reference.parameters()) {
    auto it = parameters_.find(name);
    if (it == parameters_.end()) {
      throw DataError(fmt::format("missing weight '{}'", name));
    }
    if (it->second.shape() != t.shape()) {
      throw DataError(fmt::format(
          "weight '{}' has shape {}x{}, expected {}x{}",
          name,
          it->second.rows(),
          it->second.cols(),
          t.rows(),
          t.cols()));
    }
  }
  if (parameters_.size() != reference.parameters().size()) {
    throw DataError("unexpected extra weights");
  }
}

std::size_t Model::parameterCount() const {
  std::size_t n = 0;
  for (const auto& [_, t] : parameters_) {
    n += t.size();
  }
  return n;
}

ModelGraph::ModelGraph(const Model& model, ad::Tape& tape, bool trainable, std::mt19937_64* dropoutRng)
    : model_(model), tape_(tape), trainable_(trainable), dropoutRng_(dropoutRng) {}

ad::Var ModelGraph::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) {
    return it->second;
  }
  const ad::Tensor& value = model_.parameters().at(name);
  const ad::Var v = trainable_ ? tape_.variable(value) : tape_.constant(value);
  bound_.emplace(name, v);
  return v;
}

ad::Var ModelGraph::linear(const std::string& prefix, ad::Var x) {
  return ad::add(ad::matmul(x, param(prefix + ".w")), param(prefix + ".b"));
}

ad::Var ModelGraph::layerNorm(const std::string& prefix, ad::Var x) {
  return ad::layerNormRows(x, param(prefix + ".g"), param(prefix + ".b"));
}

ad::Var ModelGraph::dropout(ad::Var x) {
  const double rate = model_.config().dropoutRate;
  if (!trainable_ || rate <= 0.0 || dropoutRng_ == nullptr) {
    return x;
  }
  std::bernoulli_distribution keep(1.0 - rate);
  ad::Tensor mask(x.rows(), x.cols());
  for (double& m : mask.values()) {
    m = keep(*dropoutRng_) ? 1.0 / (1.0 - rate) : 0.0;
  }
  return ad::mul(x, tape_.constant(std::move(mask)));
}

ad::Var ModelGraph::attention(
    const std::string& prefix,
    ad::Var queries,
    ad::Var keys,
    const ad::Tensor* mask) {
  const std::size_t heads = model_.config().numHeads;
  const std::size_t headDim = model_.config().embedDim / heads;
  const double invScale = 1.0 / std::sqrt(static_cast<double>(headDim));
  const ad::Var q = linear(prefix + ".q", queries);
  const ad::Var k = linear(prefix + ".k", keys);
  const ad::Var v = linear(prefix + ".v", keys);
  std::vector<ad::Var> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const ad::Var qh = ad::sliceCols(q, h * headDim, headDim);
    const ad::Var kh = ad::sliceCols(k, h * headDim, headDim);
    const ad::Var vh = ad::sliceCols(v, h * headDim, headDim);
    const ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), invScale);
    const ad::Var weights = mask ? ad::softmaxRows(scores, *mask) : ad::softmaxRows(scores);
    outputs.push_back(ad::matmul(weights, vh));
  }
  return linear(prefix + ".o", ad::concatCols(outputs));
}

ad::Var ModelGraph::feedForward(const std::string& prefix, ad::Var x) {
  return linear(prefix + ".ff2", ad::gelu(linear(prefix + ".ff1", x)));
}

ad::Var ModelGraph::encode(std::span<const int> glosses) {
  if (glosses.empty()) {
    throw DataError("empty gloss input");
  }
  const ModelConfig& cfg = model_.config();
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  cells.reserve(glosses.size() * cfg.embedDim);
  for (int g : glosses) {
    if (g < 0 || static_cast<std::size_t>(g) >= cfg.vocabSize) {
      throw DataError(fmt::format("gloss id {} outside vocabulary of size {}", g, cfg.vocabSize));
    }
    for (std::size_t c = 0; c < cfg.embedDim; ++c) {
      cells.emplace_back(static_cast<std::size_t>(g), c);
    }
  }
  ad::Var x = ad::reshape(ad::gather(param("enc.embed"), cells), glosses.size(), cfg.embedDim);
  x = ad::add(x, tape_.constant(sinusoidalPositions(glosses.size(), cfg.embedDim)));
  for (std::size_t l = 0; l < cfg.numLayers; ++l) {
    const std::string n = layerName("enc", l);
    x = layerNorm(n + ".ln1", ad::add(x, dropout(attention(n + ".self", x, x, nullptr))));
    x = layerNorm(n + ".ln2", ad::add(x, dropout(feedForward(n, x))));
  }
  return x;
}

DecoderPass ModelGraph::decode(ad::Var inputs, ad::Var memory) {
  const ModelConfig& cfg = model_.config();
  if (inputs.cols() != cfg.frameWidth()) {
    throw DataError(fmt::format(
        "decoder input has {} columns, frame width is {}", inputs.cols(), cfg.frameWidth()));
  }
  if (inputs.rows() > cfg.maxFrames) {
    throw DataError(fmt::format(
        "decoder history of {} frames exceeds max_frames {}", inputs.rows(), cfg.maxFrames));
  }
  const ad::Tensor mask = causalMask(inputs.rows());
  DecoderPass pass;
  ad::Var x = linear("dec.in", inputs);
  for (std::size_t l = 0; l < cfg.numLayers; ++l) {
    const std::string n = layerName("dec", l);
    x = layerNorm(n + ".ln1", ad::add(x, dropout(attention(n + ".self", x, x, &mask))));
    pass.latents.push_back(x);
    x = layerNorm(n + ".ln2", ad::add(x, dropout(attention(n + ".cross", x, memory, nullptr))));
    x = layerNorm(n + ".ln3", ad::add(x, dropout(feedForward(n, x))));
  }
  pass.output = linear("dec.out", x);
  return pass;
}

ad::Var ModelGraph::project(ad::Var latent) {
  return linear("proj", ad::meanRows(latent));
}

std::vector<ad::Var> projectLatents(const LatentStack& stack, ModelGraph& graph) {
  if (stack.layers.empty()) {
    throw std::invalid_argument("projectLatents: empty latent stack");
  }
  std::vector<ad::Var> out;
  for (const auto& layer : stack.layers) {
    std::vector<ad::Var> rows;
    for (const ad::Var& z : layer) {
      rows.push_back(graph.project(z));
    }
    out.push_back(ad::concatRows(rows));
  }
  return out;
}

std::vector<ad::Var> poolLatents(const LatentStack& stack) {
  if (stack.layers.empty()) {
    throw std::invalid_argument("poolLatents: empty latent stack");
  }
  std::vector<ad::Var> out;
  for (const auto& layer : stack.layers) {
    std::vector<ad::Var> rows;
    for (const ad::Var& z : layer) {
      rows.push_back(ad::meanRows(z));
    }
    out.push_back(ad::concatRows(rows));
  }
  return out;
}

namespace {

double counterValue(std::size_t t, std::size_t frames) {
  return frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 1.0;
}

ad::Tensor appendCounter(const ad::Tensor& pose, bool counter) {
  if (!counter) {
    return pose;
  }
  ad::Tensor out(pose.rows(), pose.cols() + 1);
  for (std::size_t t = 0; t < pose.rows(); ++t) {
    std::copy(pose.row(t).begin(), pose.row(t).end(), out.row(t).begin());
    out(t, pose.cols()) = counterValue(t, pose.rows());
  }
  return out;
}

} // namespace

ad::Tensor framesFromPoses(const PoseSequence& seq, bool counter) {
  ad::Tensor pose(seq.frameCount(), 3 * seq.jointCount());
  for (std::size_t t = 0; t < seq.frameCount(); ++t) {
    for (std::size_t j = 0; j < seq.jointCount(); ++j) {
      for (int d = 0; d < 3; ++d) {
        pose(t, 3 * j + d) = seq.frame(t)[j][d];
      }
    }
  }
  return appendCounter(pose, counter);
}

ad::Tensor framesFromRotations(const RotationSequence& rots, bool counter) {
  const std::size_t b = rots.boneCount();
  ad::Tensor pose(rots.frameCount(), 4 * b + 3);
  for (std::size_t t = 0; t < rots.frameCount(); ++t) {
    for (std::size_t i = 0; i < b; ++i) {
      const auto c = rots.quats()[t][i].coeffs();
      for (int d = 0; d < 4; ++d) {
        pose(t, 4 * i + d) = c[d];
      }
    }
    for (int d = 0; d < 3; ++d) {
      pose(t, 4 * b + d) = rots.rootPositions()[t][d];
    }
  }
  return appendCounter(pose, counter);
}

ad::Tensor teacherForcedInputs(const ad::Tensor& targets) {
  ad::Tensor inputs(targets.rows(), targets.cols());
  for (std::size_t t = 1; t < targets.rows(); ++t) {
    std::copy(targets.row(t - 1).begin(), targets.row(t - 1).end(), inputs.row(t).begin());
  }
  return inputs;
}

PoseSequence posesFromFrames(const ad::Tensor& frames, std::size_t jointCount) {
  if (frames.cols() < 3 * jointCount) {
    throw DataError("frames are narrower than the joint layout");
  }
  std::vector<PoseFrame> out;
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    PoseFrame f(jointCount);
    for (std::size_t j = 0; j < jointCount; ++j) {
      f[j] = Vec3(frames(t, 3 * j), frames(t, 3 * j + 1), frames(t, 3 * j + 2));
    }
    out.push_back(std::move(f));
  }
  return PoseSequence(std::move(out));
}

RotationSequence rotationsFromFrames(const ad::Tensor& frames, std::size_t boneCount) {
  if (frames.cols() < 4 * boneCount + 3) {
    throw DataError("frames are narrower than the rotation layout");
  }
  std::vector<std::vector<UnitQuaternion>> quats;
  std::vector<Vec3> roots;
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    std::vector<UnitQuaternion> q;
    for (std::size_t b = 0; b < boneCount; ++b) {
      q.emplace_back(frames(t, 4 * b), frames(t, 4 * b + 1), frames(t, 4 * b + 2), frames(t, 4 * b + 3));
    }
    quats.push_back(std::move(q));
    const std::size_t r = 4 * boneCount;
    roots.emplace_back(frames(t, r), frames(t, r + 1), frames(t, r + 2));
  }
  return {std::move(quats), std::move(roots)};
}

ad::Tensor encodeGlosses(const Model& model, std::span<const int> glosses) {
  ad::Tape tape;
  ModelGraph graph(model, tape, false);
  return graph.encode(glosses).value();
}

StepResult decodeStep(const Model& model, const ad::Tensor& history, const ad::Tensor& memory) {
  if (history.rows() == 0) {
    throw DataError("decoder history is empty");
  }
  ad::Tape tape;
  ModelGraph graph(model, tape, false);
  const DecoderPass pass = graph.decode(tape.constant(history), tape.constant(memory));
  const std::size_t last = history.rows() - 1;
  StepResult step;
  const auto row = pass.output.value().row(last);
  step.frame.assign(row.begin(), row.end());
  for (const ad::Var& z : pass.latents) {
    const auto zr = z.value().row(last);
    step.latents.emplace_back(1, zr.size(), std::vector<double>(zr.begin(), zr.end()));
  }
  return step;
}

namespace {

// Renormalizes quaternion blocks and clamps the counter in place.
void finalizeFrame(std::vector<double>& frame, const ModelConfig& cfg) {
  if (cfg.outputMode == OutputMode::Quaternion) {
    for (std::size_t b = 0; b < cfg.boneCount; ++b) {
      double* q = &frame[4 * b];
      const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
      if (n > 0.0) {
        // Same hemisphere as encoded targets (w >= 0).
        const double s = q[0] < 0.0 ? -1.0 / n : 1.0 / n;
        for (int k = 0; k < 4; ++k) {
          q[k] *= s;
        }
      } else {
        q[0] = 1.0;
      }
    }
  }
  if (cfg.counterEnabled) {
    double& c = frame[cfg.poseWidth()];
    c = std::clamp(c, 0.0, 1.0);
  }
}

} // namespace

Generation generate(const Model& model, std::span<const int> glosses) {
  const ModelConfig& cfg = model.config();
  const ad::Tensor memory = encodeGlosses(model, glosses);
  const std::size_t width = cfg.frameWidth();
  std::vector<double> history(width, 0.0);
  std::vector<double> emitted;
  Generation gen;
  gen.truncated = true;
  std::size_t count = 0;
  while (count < cfg.maxFrames) {
    const ad::Tensor h(count + 1, width, history);
    StepResult step = decodeStep(model, h, memory);
    finalizeFrame(step.frame, cfg);
    emitted.insert(emitted.end(), step.frame.begin(), step.frame.end());
    history.insert(history.end(), step.frame.begin(), step.frame.end());
    ++count;
    if (cfg.counterEnabled && step.frame[cfg.poseWidth()] >= kCounterStopThreshold) {
      gen.truncated = false;
      break;
    }
  }
  gen.frames = ad::Tensor(count, width, std::move(emitted));
  return gen;
}

} // namespace slp
