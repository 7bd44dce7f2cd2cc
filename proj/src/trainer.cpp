#include "slp/trainer.h"

#include "slp/errors.h"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace slp {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{
      static_cast<std::uint32_t>(seed),
      static_cast<std::uint32_t>(seed >> 32),
      static_cast<std::uint32_t>(purpose),
      static_cast<std::uint32_t>(purpose >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kShuffleStream = 1000;
constexpr std::uint64_t kDropoutStream = 7;
constexpr std::uint64_t kGradcheckStream = 11;
// Central-difference rounding noise at step 1e-5 is ~1e-10; smaller
// gradients are compared in absolute terms.
constexpr double kGradcheckFloor = 1e-5;

} // namespace

std::string toString(Contrastive c) {
  switch (c) {
    case Contrastive::None:
      return "none";
    case Contrastive::Gloss:
      return "gloss";
    case Contrastive::Sentence:
      return "sentence";
  }
  return "none";
}

Contrastive contrastiveFromString(const std::string& name) {
  if (name == "none") {
    return Contrastive::None;
  }
  if (name == "gloss") {
    return Contrastive::Gloss;
  }
  if (name == "sentence") {
    return Contrastive::Sentence;
  }
  throw std::invalid_argument(fmt::format("unknown contrastive mode '{}'", name));
}

void TrainConfig::validate() const {
  if (lambda < 0.0 || !std::isfinite(lambda)) {
    throw std::invalid_argument("lambda must be a finite non-negative number");
  }
  if (!(tau > 0.0)) {
    throw std::invalid_argument("tau must be positive");
  }
  if (batchSize < 1) {
    throw std::invalid_argument("batch size must be at least 1");
  }
  if (learningRate < 0.0 || !std::isfinite(learningRate)) {
    throw std::invalid_argument("learning rate must be a finite non-negative number");
  }
  if (modelPreset != "toy" && modelPreset != "tiny" && modelPreset != "full") {
    throw std::invalid_argument(fmt::format("unknown model preset '{}'", modelPreset));
  }
}

ModelConfig TrainConfig::resolveModel(const Dataset& dataset) const {
  if (model) {
    ModelConfig c = *model;
    c.outputMode = mode;
    if (c.jointCount != dataset.skeleton.jointCount() || c.boneCount != dataset.skeleton.boneCount()) {
      throw DataError("model config skeleton layout does not match the dataset");
    }
    if (c.vocabSize < dataset.vocabulary.size()) {
      throw DataError("model vocabulary is smaller than the dataset vocabulary");
    }
    c.validate();
    return c;
  }
  const std::size_t vocab = std::max<std::size_t>(1, dataset.vocabulary.size());
  if (modelPreset == "tiny") {
    return ModelConfig::tiny(vocab, dataset.skeleton, mode);
  }
  if (modelPreset == "full") {
    return ModelConfig::fullScale(vocab, dataset.skeleton, mode);
  }
  return ModelConfig::toy(vocab, dataset.skeleton, mode);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"mode", toString(c.mode)},
      {"contrastive", toString(c.contrastive)},
      {"lambda", c.lambda},
      {"tau", c.tau},
      {"batch_size", c.batchSize},
      {"learning_rate", c.learningRate},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"model_preset", c.modelPreset}};
  if (c.model) {
    j["model"] = *c.model;
  }
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  if (j.contains("mode")) {
    c.mode = outputModeFromString(j.at("mode").get<std::string>());
  }
  if (j.contains("contrastive")) {
    c.contrastive = contrastiveFromString(j.at("contrastive").get<std::string>());
  }
  c.lambda = j.value("lambda", c.lambda);
  c.tau = j.value("tau", c.tau);
  c.batchSize = j.value("batch_size", c.batchSize);
  c.learningRate = j.value("learning_rate", c.learningRate);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.modelPreset = j.value("model_preset", c.modelPreset);
  if (j.contains("model")) {
    c.model = j.at("model").get<ModelConfig>();
  }
}

nlohmann::json toJson(const EpochLog& log) {
  return nlohmann::json{
      {"epoch", log.epoch},
      {"total", log.total},
      {"slp", log.slp},
      {"pose", log.pose},
      {"geodesic", log.geodesic},
      {"root", log.root},
      {"mse", log.mse},
      {"counter", log.counter},
      {"contrastive", log.contrastive},
      {"lambda", log.lambda},
      {"batches", log.batches}};
}

std::string formatLossLog(const std::vector<EpochLog>& log) {
  std::string out;
  for (const EpochLog& e : log) {
    out += toJson(e).dump() + "\n";
  }
  return out;
}

std::vector<PreparedSample> prepareSamples(const Dataset& dataset, const ModelConfig& config) {
  std::vector<PreparedSample> out;
  out.reserve(dataset.samples.size());
  for (const AnnotatedSample& s : dataset.samples) {
    checkCompatible(s.poses, dataset.skeleton);
    if (s.poses.frameCount() > config.maxFrames) {
      throw DataError(fmt::format(
          "sample '{}' has {} frames, more than max_frames {}", s.id, s.poses.frameCount(), config.maxFrames));
    }
    PreparedSample p;
    p.glosses = s.glosses;
    p.targets = config.outputMode == OutputMode::Quaternion
        ? framesFromRotations(encode(s.poses, dataset.skeleton), config.counterEnabled)
        : framesFromPoses(s.poses, config.counterEnabled);
    p.sentenceEmbedding = s.sentenceEmbedding;
    out.push_back(std::move(p));
  }
  return out;
}

BatchLoss batchLoss(ModelGraph& graph, std::span<const PreparedSample* const> batch, const TrainConfig& config) {
  if (batch.empty()) {
    throw std::invalid_argument("empty batch");
  }
  ad::Tape& tape = graph.tape();
  const ModelConfig& mc = *config.model;
  const std::size_t poseWidth = mc.poseWidth();
  const auto zero = [&tape] { return tape.constant(ad::Tensor::scalar(0.0)); };

  std::vector<ad::Var> geodesic, root, mse, pose, counter, slp;
  LatentStack stack;
  stack.layers.resize(mc.numLayers);
  for (const PreparedSample* s : batch) {
    const ad::Var memory = graph.encode(s->glosses);
    const DecoderPass pass = graph.decode(tape.constant(teacherForcedInputs(s->targets)), memory);
    const ad::Var gt = tape.constant(s->targets);
    ad::Var poseTerm;
    if (mc.outputMode == OutputMode::Quaternion) {
      const std::size_t q = 4 * mc.boneCount;
      const ad::Var g = tape::geodesicLoss(ad::sliceCols(pass.output, 0, q), ad::sliceCols(gt, 0, q));
      const ad::Var r = tape::rootLoss(ad::sliceCols(pass.output, q, 3), ad::sliceCols(gt, q, 3));
      geodesic.push_back(g);
      root.push_back(r);
      poseTerm = ad::add(g, r);
    } else {
      poseTerm = tape::mseJoints(ad::sliceCols(pass.output, 0, poseWidth), ad::sliceCols(gt, 0, poseWidth));
      mse.push_back(poseTerm);
    }
    pose.push_back(poseTerm);
    ad::Var counterTerm = zero();
    if (mc.counterEnabled) {
      counterTerm = ad::mean(ad::square(ad::sub(ad::sliceCols(pass.output, poseWidth, 1), ad::sliceCols(gt, poseWidth, 1))));
    }
    counter.push_back(counterTerm);
    slp.push_back(ad::add(poseTerm, counterTerm));
    for (std::size_t l = 0; l < mc.numLayers; ++l) {
      stack.layers[l].push_back(pass.latents[l]);
    }
  }

  const auto average = [&](const std::vector<ad::Var>& v) { return v.empty() ? zero() : ad::mean(ad::concatRows(v)); };
  BatchLoss loss;
  loss.geodesic = average(geodesic);
  loss.root = average(root);
  loss.mse = average(mse);
  loss.pose = average(pose);
  loss.counter = average(counter);
  loss.slp = average(slp);
  loss.contrastive = zero();
  if (config.contrastive != Contrastive::None && batch.size() >= 2) {
    if (config.contrastive == Contrastive::Gloss) {
      GlossBatchAnnotation annotation;
      for (const PreparedSample* s : batch) {
        annotation.glossSequences.push_back(s->glosses);
      }
      loss.contrastive = tape::glossSupCon(poolLatents(stack), annotation, config.tau);
    } else {
      ad::Tensor embeddings(batch.size(), kSentenceEmbeddingDim);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i]->sentenceEmbedding.size() != kSentenceEmbeddingDim) {
          throw DataError("sentence contrastive training needs a sentence embedding for every sample");
        }
        std::copy(batch[i]->sentenceEmbedding.begin(), batch[i]->sentenceEmbedding.end(), embeddings.row(i).begin());
      }
      loss.contrastive = tape::sbertSupCon(projectLatents(stack, graph), SentenceEmbeddingBatch(std::move(embeddings)));
    }
  }
  loss.total = tape::totalLoss(loss.slp, loss.contrastive, config.lambda);
  return loss;
}

namespace {

class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  void step(ParameterSet& params, const std::map<std::string, ad::Var>& bound) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (const auto& [name, var] : bound) {
      const ad::Tensor& g = var.grad();
      if (g.size() == 0) {
        continue;
      }
      ad::Tensor& w = params.at(name);
      auto [it, inserted] = moments_.try_emplace(name);
      if (inserted) {
        it->second.first = ad::Tensor(w.rows(), w.cols());
        it->second.second = ad::Tensor(w.rows(), w.cols());
      }
      ad::Tensor& m = it->second.first;
      ad::Tensor& v = it->second.second;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
    }
  }

  std::uint64_t steps() const {
    return t_;
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  double lr_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::pair<ad::Tensor, ad::Tensor>> moments_;
};

void requireFinite(double v, const char* term, std::size_t epoch) {
  if (!std::isfinite(v)) {
    throw NumericError(fmt::format("epoch {}: non-finite {} loss", epoch, term));
  }
}

} // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& configIn, const EpochCallback& onEpoch) {
  TrainConfig config = configIn;
  config.validate();
  if (dataset.samples.empty()) {
    throw DataError("cannot train on an empty dataset");
  }
  config.model = config.resolveModel(dataset);
  Model model(*config.model, config.seed);
  const std::vector<PreparedSample> samples = prepareSamples(dataset, *config.model);
  Adam adam(config.learningRate);
  std::mt19937_64 dropoutRng = stream(config.seed, kDropoutStream);

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffleRng = stream(config.seed, kShuffleStream + epoch);
    std::shuffle(order.begin(), order.end(), shuffleRng);

    EpochLog log;
    log.epoch = epoch;
    log.lambda = config.lambda;
    for (std::size_t start = 0; start < order.size(); start += config.batchSize) {
      const std::size_t end = std::min(order.size(), start + config.batchSize);
      std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<const PreparedSample*> batch;
      for (std::size_t i : ids) {
        batch.push_back(&samples[i]);
      }
      ad::Tape tape;
      ModelGraph graph(model, tape, true, &dropoutRng);
      BatchLoss loss;
      try {
        loss = batchLoss(graph, batch, config);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("epoch {}: {}", epoch, e.what()));
      }
      requireFinite(loss.slp.value().item(), "slp", epoch);
      requireFinite(loss.contrastive.value().item(), "contrastive", epoch);
      requireFinite(loss.total.value().item(), "total", epoch);
      tape.backward(loss.total);
      adam.step(model.parameters(), graph.bound());

      log.pose += loss.pose.value().item();
      log.geodesic += loss.geodesic.value().item();
      log.root += loss.root.value().item();
      log.mse += loss.mse.value().item();
      log.counter += loss.counter.value().item();
      log.slp += loss.slp.value().item();
      log.contrastive += loss.contrastive.value().item();
      log.total += loss.total.value().item();
      log.batches.push_back(std::move(ids));
    }
    const double nb = static_cast<double>(log.batches.size());
    for (double* v : {&log.pose, &log.geodesic, &log.root, &log.mse, &log.counter, &log.slp, &log.contrastive, &log.total}) {
      *v /= nb;
    }
    result.log.push_back(log);
    if (onEpoch && !onEpoch(result.log.back(), model)) {
      break;
    }
  }

  result.checkpoint.config = model.config();
  result.checkpoint.parameters = model.parameters();
  result.checkpoint.seed = config.seed;
  result.checkpoint.step = adam.steps();
  result.checkpoint.jointNames = dataset.skeleton.jointNames();
  result.checkpoint.metadata = {{"train_config", config}, {"epochs_run", result.log.size()}};
  return result;
}

// ---- gradient check ----

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const GradcheckEntry& e : entries) {
    w = std::max(w, e.maxRelativeError);
  }
  return w;
}

namespace {

using TermSelector = std::function<ad::Var(const BatchLoss&)>;

GradcheckEntry checkTerm(
    const std::string& name,
    Model& model,
    const std::vector<const PreparedSample*>& batch,
    const TrainConfig& config,
    const TermSelector& select,
    double step) {
  const auto evaluate = [&](bool trainable, ad::Tape& tape) -> ad::Var {
    ModelGraph graph(model, tape, trainable);
    const BatchLoss loss = batchLoss(graph, batch, config);
    return select(loss);
  };

  // Analytic gradients.
  ParameterSet analytic;
  {
    ad::Tape tape;
    ModelGraph graph(model, tape, true);
    const BatchLoss loss = batchLoss(graph, batch, config);
    const ad::Var term = select(loss);
    tape.backward(term);
    for (const auto& [pname, w] : model.parameters()) {
      auto it = graph.bound().find(pname);
      analytic[pname] = (it != graph.bound().end() && it->second.grad().size() == w.size())
          ? it->second.grad()
          : ad::Tensor(w.rows(), w.cols());
    }
  }

  GradcheckEntry entry{name, 0.0, 0};
  for (auto& [pname, w] : model.parameters()) {
    ad::Tensor numeric(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double x = w[i];
      w[i] = x + step;
      double fp;
      {
        ad::Tape tape;
        fp = evaluate(false, tape).value().item();
      }
      w[i] = x - step;
      double fm;
      {
        ad::Tape tape;
        fm = evaluate(false, tape).value().item();
      }
      w[i] = x;
      numeric[i] = (fp - fm) / (2.0 * step);
      if (!std::isfinite(numeric[i])) {
        throw NumericError(fmt::format("gradcheck {}: non-finite difference for {}", name, pname));
      }
    }
    entry.maxRelativeError = std::max(entry.maxRelativeError, ad::maxRelativeError(analytic.at(pname), numeric, kGradcheckFloor));
    entry.parameters += w.size();
  }
  return entry;
}

} // namespace

GradcheckReport gradcheck(std::uint64_t seed, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw std::invalid_argument("invalid step");
  }
  SynthSpec spec;
  spec.numGlosses = 4;
  spec.numSequences = 3;
  spec.framesPerSequence = 5;
  spec.minGlossesPerSequence = 1;
  spec.maxGlossesPerSequence = 3;
  spec.seed = seed;
  const Dataset ds = synthDataset(spec);

  GradcheckReport report;
  report.step = step;
  for (OutputMode mode : {OutputMode::Cartesian, OutputMode::Quaternion}) {
    TrainConfig config;
    config.mode = mode;
    config.modelPreset = "tiny";
    config.tau = 1.0;
    // Large enough that the contrastive gradient is not swamped.
    config.lambda = 0.5;
    config.model = config.resolveModel(ds);
    Model model(*config.model, seed);
    // Zero biases leave the start frame's layer norm at zero variance, too
    // stiff for central differences; check at a jittered point instead.
    std::mt19937_64 jitter = stream(seed, kGradcheckStream);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (auto& [name, w] : model.parameters()) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] += noise(jitter);
      }
    }
    const std::vector<PreparedSample> samples = prepareSamples(ds, *config.model);
    std::vector<const PreparedSample*> batch;
    for (const PreparedSample& s : samples) {
      batch.push_back(&s);
    }
    const std::string m = toString(mode);

    config.contrastive = Contrastive::None;
    if (mode == OutputMode::Cartesian) {
      report.entries.push_back(checkTerm("mse_joints", model, batch, config, [](const BatchLoss& l) { return l.mse; }, step));
    } else {
      report.entries.push_back(checkTerm("geodesic+root", model, batch, config, [](const BatchLoss& l) { return l.pose; }, step));
      config.contrastive = Contrastive::Gloss;
      report.entries.push_back(checkTerm("gloss_contrastive", model, batch, config, [](const BatchLoss& l) { return l.contrastive; }, step));
      config.contrastive = Contrastive::Sentence;
      report.entries.push_back(checkTerm("sentence_contrastive", model, batch, config, [](const BatchLoss& l) { return l.contrastive; }, step));
    }
    for (Contrastive c : {Contrastive::None, Contrastive::Gloss, Contrastive::Sentence}) {
      config.contrastive = c;
      report.entries.push_back(checkTerm(
          fmt::format("total/{}/{}", m, toString(c)), model, batch, config, [](const BatchLoss& l) { return l.total; }, step));
    }
  }
  return report;
}

// ---- evaluation ----

std::map<std::string, std::vector<std::size_t>> bodyParts(const Skeleton& skeleton) {
  std::map<std::string, std::vector<std::size_t>> parts;
  for (std::size_t j = 0; j < skeleton.jointCount(); ++j) {
    const std::string& n = skeleton.jointNames()[j];
    if (n.starts_with("l_")) {
      parts["left_arm"].push_back(j);
    } else if (n.starts_with("r_")) {
      parts["right_arm"].push_back(j);
    } else {
      parts["torso"].push_back(j);
    }
  }
  return parts;
}

SampleMetrics compareSequences(
    const std::string& id,
    const PoseSequence& pred,
    const PoseSequence& gt,
    const Skeleton& skeleton,
    bool perPart) {
  checkCompatible(pred, skeleton);
  checkCompatible(gt, skeleton);
  SampleMetrics m;
  m.id = id;
  m.frames = pred.frameCount();
  const double fallback = skeleton.meanBoneLength();
  m.mje = mje(pred, gt);
  m.pck = pck(pred, gt, fallback);
  m.mbae = mbae(encode(pred, skeleton), encode(gt, skeleton));
  if (perPart) {
    for (const auto& [name, joints] : bodyParts(skeleton)) {
      m.partMje[name] = mje(pred, gt, std::span<const std::size_t>(joints));
      m.partPck[name] = pck(pred, gt, fallback, kDefaultPckAlpha, std::span<const std::size_t>(joints));
    }
  }
  return m;
}

EvaluationReport aggregate(std::vector<SampleMetrics> samples, bool perPart) {
  EvaluationReport r;
  std::vector<double> a, b, c;
  std::map<std::string, std::vector<double>> pm, pp;
  for (const SampleMetrics& s : samples) {
    a.push_back(s.mje);
    b.push_back(s.mbae);
    c.push_back(s.pck);
    r.truncated += s.truncated ? 1 : 0;
    for (const auto& [k, v] : s.partMje) {
      pm[k].push_back(v);
    }
    for (const auto& [k, v] : s.partPck) {
      pp[k].push_back(v);
    }
  }
  r.mje = summarize(a);
  r.mbae = summarize(b);
  r.pck = summarize(c);
  if (perPart) {
    for (const auto& [k, v] : pm) {
      r.partMje[k] = summarize(v);
    }
    for (const auto& [k, v] : pp) {
      r.partPck[k] = summarize(v);
    }
  }
  r.samples = std::move(samples);
  return r;
}

namespace {

void checkCheckpointMatches(const Checkpoint& ckpt, const Dataset& dataset) {
  if (dataset.samples.empty()) {
    throw DataError("cannot evaluate an empty dataset");
  }
  if (ckpt.jointNames != dataset.skeleton.jointNames() || ckpt.config.jointCount != dataset.skeleton.jointCount() ||
      ckpt.config.boneCount != dataset.skeleton.boneCount()) {
    throw DataError("checkpoint skeleton does not match the dataset skeleton");
  }
}

} // namespace

EvaluationReport evaluate(const Checkpoint& checkpoint, const Dataset& dataset, bool perPart) {
  checkCheckpointMatches(checkpoint, dataset);
  const Model model(checkpoint.config, checkpoint.parameters);
  std::vector<SampleMetrics> metrics;
  for (const AnnotatedSample& s : dataset.samples) {
    const Generation gen = generate(model, s.glosses);
    const PoseSequence pred = checkpoint.config.outputMode == OutputMode::Quaternion
        ? decode(rotationsFromFrames(gen.frames, checkpoint.config.boneCount), dataset.skeleton)
        : posesFromFrames(gen.frames, checkpoint.config.jointCount);
    SampleMetrics m = compareSequences(s.id, pred, s.poses, dataset.skeleton, perPart);
    m.truncated = gen.truncated;
    metrics.push_back(std::move(m));
  }
  return aggregate(std::move(metrics), perPart);
}

EvaluationReport evaluateIdentity(const Dataset& dataset, bool perPart) {
  if (dataset.samples.empty()) {
    throw DataError("cannot evaluate an empty dataset");
  }
  std::vector<SampleMetrics> metrics;
  for (const AnnotatedSample& s : dataset.samples) {
    metrics.push_back(compareSequences(s.id, s.poses, s.poses, dataset.skeleton, perPart));
  }
  return aggregate(std::move(metrics), perPart);
}

std::string formatReportTable(const EvaluationReport& r, const std::string& label) {
  std::string out = fmt::format("{:<28} {:>18} {:>18} {:>18}\n", "", "MJE", "MBAE", "PCK");
  const auto cell = [](const MetricSummary& s) { return fmt::format("{:.3f} ± {:.3f}", s.mean, s.stddev); };
  out += fmt::format("{:<28} {:>18} {:>18} {:>18}\n", label, cell(r.mje), cell(r.mbae), cell(r.pck));
  for (const auto& [part, s] : r.partMje) {
    out += fmt::format(
        "{:<28} {:>18} {:>18} {:>18}\n", "  " + part, cell(s), "-", cell(r.partPck.at(part)));
  }
  out += fmt::format("samples: {}  truncated at max_frames: {}\n", r.samples.size(), r.truncated);
  return out;
}

nlohmann::json toJson(const EvaluationReport& r) {
  const auto summary = [](const MetricSummary& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.stddev}}; };
  nlohmann::json j{
      {"mje", summary(r.mje)},
      {"mbae", summary(r.mbae)},
      {"pck", summary(r.pck)},
      {"samples", r.samples.size()},
      {"truncated", r.truncated}};
  if (!r.partMje.empty()) {
    nlohmann::json parts = nlohmann::json::object();
    for (const auto& [part, s] : r.partMje) {
      parts[part] = {{"mje", summary(s)}, {"pck", summary(r.partPck.at(part))}};
    }
    j["parts"] = parts;
  }
  return j;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson needs two equal-length series of at least 2 values");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

double semanticAlignment(const Checkpoint& checkpoint, const Dataset& dataset) {
  checkCheckpointMatches(checkpoint, dataset);
  const Model model(checkpoint.config, checkpoint.parameters);
  const std::vector<PreparedSample> samples = prepareSamples(dataset, checkpoint.config);
  const std::size_t n = samples.size();
  std::vector<std::vector<double>> projected;
  for (const PreparedSample& s : samples) {
    ad::Tape tape;
    ModelGraph graph(model, tape, false);
    const ad::Var memory = graph.encode(s.glosses);
    const DecoderPass pass = graph.decode(tape.constant(teacherForcedInputs(s.targets)), memory);
    const auto row = graph.project(pass.latents.back()).value().values();
    projected.emplace_back(row.begin(), row.end());
  }
  std::vector<double> latentSims;
  std::vector<double> sentenceSims;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      latentSims.push_back(cosineSimilarity(projected[i], projected[j]));
      sentenceSims.push_back(
          cosineSimilarity(dataset.samples[i].sentenceEmbedding, dataset.samples[j].sentenceEmbedding));
    }
  }
  return pearson(latentSims, sentenceSims);
}

// ---- configuration grid ----

std::vector<TrainConfig> sweepConfigs(const SweepSpec& spec, std::vector<std::pair<std::string, std::string>>* labels) {
  std::vector<TrainConfig> configs;
  const auto add = [&](const TrainConfig& c, std::string group, std::string variant) {
    configs.push_back(c);
    if (labels) {
      labels->emplace_back(std::move(group), std::move(variant));
    }
  };
  for (OutputMode mode : {OutputMode::Cartesian, OutputMode::Quaternion}) {
    const std::string group = mode == OutputMode::Cartesian ? "3D cart." : "quaternions";
    TrainConfig c = spec.base;
    c.mode = mode;
    c.model.reset();
    c.contrastive = Contrastive::None;
    add(c, group, "base");
    c.contrastive = Contrastive::Gloss;
    c.lambda = spec.glossLambda;
    add(c, group, "w/ gloss cont.");
    c.contrastive = Contrastive::Sentence;
    for (double lambda : spec.sentenceLambdas) {
      c.lambda = lambda;
      add(c, group, fmt::format("w/ SBERT cont. lambda={:g}", lambda));
    }
    for (std::size_t bs : spec.sentenceBatchSizes) {
      TrainConfig b = c;
      b.lambda = spec.sentenceLambdas.empty() ? spec.base.lambda : spec.sentenceLambdas.front();
      b.batchSize = bs;
      add(b, group, fmt::format("w/ SBERT cont. batch={} lambda={:g}", bs, b.lambda));
    }
  }
  return configs;
}

std::vector<SweepRow> runSweep(const Dataset& dataset, const SweepSpec& spec) {
  std::vector<std::pair<std::string, std::string>> labels;
  const std::vector<TrainConfig> configs = sweepConfigs(spec, &labels);
  std::vector<SweepRow> rows(configs.size());
  std::atomic<std::size_t> next{0};
  std::mutex errorMutex;
  std::exception_ptr error;
  const auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        TrainResult tr = train(dataset, configs[i]);
        rows[i] = {labels[i].first, labels[i].second, configs[i], evaluate(tr.checkpoint, dataset)};
      } catch (...) {
        std::lock_guard lock(errorMutex);
        if (!error) {
          error = std::current_exception();
        }
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(spec.jobs, configs.size()));
  std::vector<std::thread> threads;
  for (std::size_t j = 1; j < jobs; ++j) {
    threads.emplace_back(worker);
  }
  worker();
  for (std::thread& t : threads) {
    t.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
  return rows;
}

std::string formatSweepTable(const std::vector<SweepRow>& rows) {
  std::string out = fmt::format("{:<12} {:<36} {:>18} {:>18} {:>18}\n", "", "", "MJE", "MBAE", "PCK");
  const auto cell = [](const MetricSummary& s) { return fmt::format("{:.3f} ± {:.3f}", s.mean, s.stddev); };
  std::string lastGroup;
  for (const SweepRow& r : rows) {
    out += fmt::format(
        "{:<12} {:<36} {:>18} {:>18} {:>18}\n",
        r.group == lastGroup ? "" : r.group,
        r.variant,
        cell(r.report.mje),
        cell(r.report.mbae),
        cell(r.report.pck));
    lastGroup = r.group;
  }
  return out;
}

std::string formatSweepJson(const std::vector<SweepRow>& rows) {
  std::string out;
  for (const SweepRow& r : rows) {
    nlohmann::json j = toJson(r.report);
    j["group"] = r.group;
    j["variant"] = r.variant;
    j["config"] = r.config;
    out += j.dump() + "\n";
  }
  return out;
}

} // namespace slp
