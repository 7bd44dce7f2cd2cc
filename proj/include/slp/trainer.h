#pragma once

#include "slp/checkpoint.h"
#include "slp/dataio.h"
#include "slp/losses.h"
#include "slp/metrics.h"
#include "slp/model.h"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <optional>
#include <string>
#include <vector>

namespace slp {

// ---- synthetic data ----

struct SynthSpec {
  std::size_t numGlosses = 8;
  std::size_t numSequences = 32;
  std::size_t framesPerSequence = 24;
  std::size_t minGlossesPerSequence = 2;
  std::size_t maxGlossesPerSequence = 4;
  std::uint64_t seed = 0;
  // Only "bag_of_gloss_projection" is supported.
  std::string sentenceEmbeddingMode = "bag_of_gloss_projection";

  void validate() const;
};

/// Each gloss owns a smooth per-bone rotation curve on the arm bones; a
/// sample's motion concatenates its glosses' curves. Sentence embeddings are
/// the L2-normalized gloss count vector times a fixed seed-derived
/// 384 x numGlosses matrix. Bitwise reproducible for a given spec.
Dataset synthDataset(const SynthSpec& spec);

// The seed-derived 384 x numGlosses embedding matrix used by synthDataset.
ad::Tensor sentenceProjectionMatrix(const SynthSpec& spec);
// L2-normalized gloss counts, numGlosses long.
std::vector<double> glossCountVector(std::span<const int> glosses, std::size_t numGlosses);

// ---- training ----

enum class Contrastive { None, Gloss, Sentence };

std::string toString(Contrastive c);
Contrastive contrastiveFromString(const std::string& name);

struct TrainConfig {
  OutputMode mode = OutputMode::Quaternion;
  Contrastive contrastive = Contrastive::None;
  double lambda = kDefaultGlossLambda;
  double tau = kDefaultTemperature;
  std::size_t batchSize = 8;
  double learningRate = 1e-3;
  std::size_t epochs = 300;
  std::uint64_t seed = 0;
  // "toy", "tiny" or "full"; vocabulary and skeleton layout come from the dataset.
  std::string modelPreset = "toy";
  std::optional<ModelConfig> model;

  void validate() const;
  ModelConfig resolveModel(const Dataset& dataset) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Epoch means of every objective term. In quaternion mode `pose` is
/// geodesic + root; in cartesian mode it is the joint MSE. `slp` adds the
/// counter regression term. total = slp + lambda * contrastive.
struct EpochLog {
  std::size_t epoch = 0;
  double pose = 0.0;
  double geodesic = 0.0;
  double root = 0.0;
  double mse = 0.0;
  double counter = 0.0;
  double slp = 0.0;
  double contrastive = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::vector<std::vector<std::size_t>> batches;
};

nlohmann::json toJson(const EpochLog& log);
std::string formatLossLog(const std::vector<EpochLog>& log);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochLog&, const Model&)>;

/// Teacher-forced minibatch Adam (beta1 0.9, beta2 0.999, eps 1e-8).
/// Throws NumericError naming the epoch and term on a non-finite loss.
TrainResult train(const Dataset& dataset, const TrainConfig& config, const EpochCallback& onEpoch = {});

/// Loss terms of one batch, differentiable through `graph`.
struct BatchLoss {
  ad::Var pose;
  ad::Var geodesic;
  ad::Var root;
  ad::Var mse;
  ad::Var counter;
  ad::Var slp;
  ad::Var contrastive;
  ad::Var total;
};

struct PreparedSample {
  std::vector<int> glosses;
  ad::Tensor targets;  // T x frameWidth
  std::vector<double> sentenceEmbedding;
};

std::vector<PreparedSample> prepareSamples(const Dataset& dataset, const ModelConfig& config);

BatchLoss batchLoss(
    ModelGraph& graph,
    std::span<const PreparedSample* const> batch,
    const TrainConfig& config);

// ---- gradient check ----

struct GradcheckEntry {
  std::string name;
  double maxRelativeError = 0.0;
  std::size_t parameters = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double step = 0.0;
  double worst() const;
};

/// Central differences against reverse-mode gradients over every weight of
/// a tiny model, for each loss term and each training mode's total loss.
/// Weights are jittered off their initial values first. Relative error uses
/// a 1e-5 magnitude floor.
/// Throws std::invalid_argument("invalid step") for step <= 0.
GradcheckReport gradcheck(std::uint64_t seed, double step);

// ---- evaluation ----

struct SampleMetrics {
  std::string id;
  double mje = 0.0;
  double mbae = 0.0;
  double pck = 0.0;
  std::size_t frames = 0;
  bool truncated = false;
  std::map<std::string, double> partMje;
  std::map<std::string, double> partPck;
};

struct EvaluationReport {
  std::vector<SampleMetrics> samples;
  MetricSummary mje;
  MetricSummary mbae;
  MetricSummary pck;
  std::size_t truncated = 0;
  std::map<std::string, MetricSummary> partMje;
  std::map<std::string, MetricSummary> partPck;
};

/// Joint groups for per-part reporting: "torso", "left_arm", "right_arm"
/// by joint-name prefix. Groups with no joints are omitted.
std::map<std::string, std::vector<std::size_t>> bodyParts(const Skeleton& skeleton);

SampleMetrics compareSequences(
    const std::string& id,
    const PoseSequence& pred,
    const PoseSequence& gt,
    const Skeleton& skeleton,
    bool perPart);

EvaluationReport aggregate(std::vector<SampleMetrics> samples, bool perPart);

/// Generates every sample from its glosses and scores it against the
/// ground truth. Throws DataError on an empty dataset or a skeleton that
/// does not match the checkpoint.
EvaluationReport evaluate(const Checkpoint& checkpoint, const Dataset& dataset, bool perPart = false);

/// Ground truth scored against itself, bypassing generation.
EvaluationReport evaluateIdentity(const Dataset& dataset, bool perPart = false);

std::string formatReportTable(const EvaluationReport& report, const std::string& label);
nlohmann::json toJson(const EvaluationReport& report);

/// Pearson correlation between the off-diagonal entries of the final
/// decoder layer's projected-latent cosine-similarity matrix (teacher-forced
/// on ground truth) and of the sentence-embedding similarity matrix.
double semanticAlignment(const Checkpoint& checkpoint, const Dataset& dataset);

double pearson(std::span<const double> x, std::span<const double> y);

// ---- configuration grid ----

struct SweepSpec {
  std::vector<double> sentenceLambdas{1e-4, 1e-3, 1e-2, 1e-1};
  std::vector<std::size_t> sentenceBatchSizes;
  double glossLambda = kDefaultGlossLambda;
  TrainConfig base;
  std::size_t jobs = 1;
};

struct SweepRow {
  std::string group;
  std::string variant;
  TrainConfig config;
  EvaluationReport report;
};

std::vector<TrainConfig> sweepConfigs(const SweepSpec& spec, std::vector<std::pair<std::string, std::string>>* labels = nullptr);
std::vector<SweepRow> runSweep(const Dataset& dataset, const SweepSpec& spec);
std::string formatSweepTable(const std::vector<SweepRow>& rows);
std::string formatSweepJson(const std::vector<SweepRow>& rows);

} // namespace slp
