// slpq: command-line front end.

#include "slp/checkpoint.h"
#include "slp/dataio.h"
#include "slp/errors.h"
#include "slp/losses.h"
#include "slp/metrics.h"
#include "slp/trainer.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <fmt/format.h>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace {

using namespace slp;
using nlohmann::json;

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    writeFileAtomic(out, text);
  }
}

std::string fileFormat(const std::string& path) {
  const std::string text = readFile(path);
  const auto nl = text.find('\n');
  try {
    const json header = json::parse(text.substr(0, nl));
    if (header.is_object() && header.contains("format") && header["format"].is_string()) {
      return header["format"].get<std::string>();
    }
  } catch (const json::exception&) {
  }
  throw DataError(fmt::format("{}:1: unrecognized header", path));
}

// Poses from either a pose file or a rotation file.
PoseSequence loadPoses(const std::string& path, const Skeleton& skeleton) {
  if (fileFormat(path) == "slp-rotation") {
    return decode(loadRotationFile(path).sequence, skeleton);
  }
  PoseFile pf = loadPoseFile(path);
  if (pf.joints != skeleton.jointNames()) {
    throw DataError(fmt::format("{}: joint order does not match the skeleton", path));
  }
  return pf.sequence;
}

RotationSequence loadRotations(const std::string& path, const Skeleton& skeleton) {
  if (fileFormat(path) == "slp-rotation") {
    return loadRotationFile(path).sequence;
  }
  return encode(loadPoses(path, skeleton), skeleton);
}

// Latents CSV: "<id>,<values...>" per line; returns an N x d matrix.
ad::Tensor loadLatents(const std::string& path, std::vector<std::string>* ids) {
  const std::string text = readFile(path);
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t line = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) {
      end = text.size();
    }
    const std::string row = text.substr(pos, end - pos);
    pos = end + 1;
    ++line;
    if (row.empty()) {
      continue;
    }
    std::vector<std::string> fields;
    std::size_t s = 0;
    for (;;) {
      const auto c = row.find(',', s);
      fields.push_back(row.substr(s, c == std::string::npos ? std::string::npos : c - s));
      if (c == std::string::npos) {
        break;
      }
      s = c + 1;
    }
    if (fields.size() < 2) {
      throw DataError(fmt::format("{}:{}: expected an id and at least one value", path, line));
    }
    if (rows == 0) {
      cols = fields.size() - 1;
    } else if (fields.size() - 1 != cols) {
      throw DataError(fmt::format("{}:{}: expected {} values, got {}", path, line, cols, fields.size() - 1));
    }
    if (ids) {
      ids->push_back(fields[0]);
    }
    for (std::size_t k = 1; k < fields.size(); ++k) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(fields[k], &used));
        if (used != fields[k].size()) {
          throw std::invalid_argument("trailing");
        }
      } catch (const std::exception&) {
        throw DataError(fmt::format("{}:{}: invalid number '{}'", path, line, fields[k]));
      }
    }
    ++rows;
  }
  if (rows == 0) {
    throw DataError(fmt::format("{}: no rows", path));
  }
  return ad::Tensor(rows, cols, std::move(values));
}

// ---- JSON config files ----

std::string jsonScalar(const json& v) {
  if (v.is_string()) {
    return v.get<std::string>();
  }
  if (v.is_boolean()) {
    return v.get<bool>() ? "true" : "false";
  }
  return v.dump();
}

// Expands {"key": value} from --config files into "--key=value" arguments
// placed right after the subcommand name, so explicit flags come later and win.
std::vector<std::string> expandConfig(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::vector<std::string> configs;
  std::set<std::string> explicitFlags;
  std::size_t subcommandPos = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config" && i + 1 < args.size()) {
      configs.push_back(args[++i]);
      continue;
    }
    if (a.starts_with("--config=")) {
      configs.push_back(a.substr(9));
      continue;
    }
    if (a.starts_with("--")) {
      explicitFlags.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
    } else if (subcommandPos == 0 && i > 0) {
      subcommandPos = out.size() + 1;
    }
    out.push_back(a);
  }
  std::vector<std::string> injected;
  for (const std::string& path : configs) {
    json doc;
    try {
      doc = json::parse(readFile(path));
    } catch (const json::exception& e) {
      throw DataError(fmt::format("{}: {}", path, e.what()));
    }
    if (!doc.is_object()) {
      throw DataError(fmt::format("{}: config must be a JSON object", path));
    }
    for (const auto& [key, value] : doc.items()) {
      if (explicitFlags.contains(key)) {
        continue;
      }
      if (value.is_array()) {
        for (const json& v : value) {
          injected.push_back(fmt::format("--{}={}", key, jsonScalar(v)));
        }
      } else if (value.is_boolean()) {
        if (value.get<bool>()) {
          injected.push_back("--" + key);
        }
      } else {
        injected.push_back(fmt::format("--{}={}", key, jsonScalar(value)));
      }
    }
  }
  if (subcommandPos == 0) {
    subcommandPos = out.size();
  }
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(subcommandPos), injected.begin(), injected.end());
  return out;
}

// ---- commands ----

struct Common {
  std::string out;
  std::string format = "table";
};

void addFormat(CLI::App* cmd, Common& c) {
  cmd->add_option("--format", c.format, "table or json")->check(CLI::IsMember({"table", "json"}));
  cmd->add_option("--out", c.out, "output file (default: standard output)");
}

int runEncode(const std::string& skel, const std::string& input, const std::string& out) {
  const Skeleton skeleton = loadSkeleton(skel);
  const PoseSequence poses = loadPoses(input, skeleton);
  emit(formatRotationFile(skeleton, encode(poses, skeleton)), out);
  return kOk;
}

int runDecode(const std::string& skel, const std::string& input, const std::string& out) {
  const Skeleton skeleton = loadSkeleton(skel);
  emit(formatPoseFile(skeleton.jointNames(), decode(loadRotations(input, skeleton), skeleton)), out);
  return kOk;
}

std::string renderReport(const EvaluationReport& report, const std::string& label, const Common& c) {
  if (c.format == "json") {
    json j = toJson(report);
    j["label"] = label;
    return j.dump() + "\n";
  }
  return formatReportTable(report, label);
}

struct EvalArgs {
  std::string skeleton;
  std::vector<std::string> pred;
  std::vector<std::string> gt;
  std::string checkpoint;
  std::string dataset;
  bool perPart = false;
  Common common;
};

int runEval(const EvalArgs& a) {
  if (!a.checkpoint.empty() || !a.dataset.empty()) {
    if (a.checkpoint.empty() || a.dataset.empty() || !a.pred.empty() || !a.gt.empty()) {
      throw UsageError("eval takes either --checkpoint with --dataset, or --pred with --gt");
    }
    const Checkpoint ckpt = loadCheckpoint(a.checkpoint);
    const Dataset ds = loadDataset(a.dataset);
    emit(renderReport(evaluate(ckpt, ds, a.perPart), toString(ckpt.config.outputMode), a.common), a.common.out);
    return kOk;
  }
  if (a.skeleton.empty() || a.pred.empty() || a.pred.size() != a.gt.size()) {
    throw UsageError("eval needs --skeleton and matching numbers of --pred and --gt files");
  }
  const Skeleton skeleton = loadSkeleton(a.skeleton);
  std::vector<SampleMetrics> samples;
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    samples.push_back(compareSequences(
        a.pred[i], loadPoses(a.pred[i], skeleton), loadPoses(a.gt[i], skeleton), skeleton, a.perPart));
  }
  emit(renderReport(aggregate(std::move(samples), a.perPart), "pred", a.common), a.common.out);
  return kOk;
}

struct LossArgs {
  std::string name;
  std::string skeleton;
  std::string pred;
  std::string gt;
  std::string latents;
  std::string glosses;
  std::string embeddings;
  double tau = kDefaultTemperature;
  std::string out;
};

int runLoss(const LossArgs& a) {
  double value = 0.0;
  const auto needPair = [&] {
    if (a.skeleton.empty() || a.pred.empty() || a.gt.empty()) {
      throw UsageError(fmt::format("loss {} needs --skeleton, --pred and --gt", a.name));
    }
  };
  if (a.name == "mse_joints") {
    needPair();
    const Skeleton s = loadSkeleton(a.skeleton);
    value = mseJoints(loadPoses(a.pred, s), loadPoses(a.gt, s));
  } else if (a.name == "geodesic" || a.name == "root" || a.name == "geodesic+root") {
    needPair();
    const Skeleton s = loadSkeleton(a.skeleton);
    const RotationSequence p = loadRotations(a.pred, s);
    const RotationSequence g = loadRotations(a.gt, s);
    const double geo = a.name == "root" ? 0.0 : geodesicLoss(p, g);
    const double root = a.name == "geodesic" ? 0.0 : rootLoss(p.rootPositions(), g.rootPositions());
    value = geo + root;
  } else if (a.name == "gloss_supcon") {
    if (a.latents.empty() || a.glosses.empty()) {
      throw UsageError("loss gloss_supcon needs --latents and --glosses");
    }
    std::vector<std::string> ids;
    const ad::Tensor z = loadLatents(a.latents, &ids);
    std::map<std::string, std::vector<std::string>> byId;
    for (GlossRow& r : loadGlossTsv(a.glosses)) {
      byId[r.id] = std::move(r.tokens);
    }
    Vocabulary vocab;
    GlossBatchAnnotation annotation;
    for (const std::string& id : ids) {
      auto it = byId.find(id);
      if (it == byId.end()) {
        throw DataError(fmt::format("{}: no glosses for sample '{}'", a.glosses, id));
      }
      std::vector<int> seq;
      for (const std::string& t : it->second) {
        seq.push_back(vocab.intern(t));
      }
      annotation.glossSequences.push_back(std::move(seq));
    }
    value = glossSupConLayer(z, annotation, a.tau);
  } else if (a.name == "sbert_supcon") {
    if (a.latents.empty() || a.embeddings.empty()) {
      throw UsageError("loss sbert_supcon needs --latents and --embeddings");
    }
    std::vector<std::string> ids;
    const ad::Tensor z = loadLatents(a.latents, &ids);
    std::map<std::string, std::vector<double>> byId;
    for (EmbeddingRow& r : loadEmbeddingCsv(a.embeddings)) {
      byId[r.id] = std::move(r.values);
    }
    ad::Tensor e(ids.size(), kSentenceEmbeddingDim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto it = byId.find(ids[i]);
      if (it == byId.end()) {
        throw DataError(fmt::format("{}: no embedding for sample '{}'", a.embeddings, ids[i]));
      }
      std::copy(it->second.begin(), it->second.end(), e.row(i).begin());
    }
    value = sbertSupConLayer(z, SentenceEmbeddingBatch(std::move(e)));
  } else {
    throw UsageError(fmt::format("unknown loss '{}'", a.name));
  }
  if (!std::isfinite(value)) {
    throw NumericError(fmt::format("{} loss is not finite", a.name));
  }
  emit(json{{"loss", a.name}, {"value", value}}.dump() + "\n", a.out);
  return kOk;
}

struct TrainArgs {
  std::string dataset;
  std::string mode = "quaternion";
  std::string contrastive = "none";
  std::string log;
  std::string preset = "toy";
  TrainConfig config;
  std::string out;
  bool quiet = false;
};

TrainConfig resolveTrainConfig(const TrainArgs& a) {
  TrainConfig c = a.config;
  c.mode = outputModeFromString(a.mode);
  c.contrastive = contrastiveFromString(a.contrastive);
  c.modelPreset = a.preset;
  c.validate();
  return c;
}

int runTrain(const TrainArgs& a) {
  const TrainConfig config = resolveTrainConfig(a);
  const Dataset ds = loadDataset(a.dataset);
  std::string logText;
  const TrainResult result = train(ds, config, [&](const EpochLog& e, const Model&) {
    const std::string line = toJson(e).dump() + "\n";
    logText += line;
    if (!a.quiet) {
      std::fputs(line.c_str(), stderr);
    }
    return true;
  });
  saveCheckpoint(result.checkpoint, a.out);
  if (!a.log.empty()) {
    writeFileAtomic(a.log, logText);
  }
  return kOk;
}

int runGradcheck(std::uint64_t seed, double step, double tolerance, const Common& c) {
  const GradcheckReport report = gradcheck(seed, step);
  std::string text;
  for (const GradcheckEntry& e : report.entries) {
    if (c.format == "json") {
      text += json{{"term", e.name}, {"max_relative_error", e.maxRelativeError}, {"parameters", e.parameters}}.dump() + "\n";
    } else {
      text += fmt::format("{:<28} {:.3e}  ({} parameters)\n", e.name, e.maxRelativeError, e.parameters);
    }
  }
  const bool pass = report.worst() <= tolerance;
  if (c.format == "json") {
    text += json{{"worst", report.worst()}, {"step", step}, {"tolerance", tolerance}, {"pass", pass}}.dump() + "\n";
  } else {
    text += fmt::format("worst {:.3e} (step {:g}, tolerance {:g}): {}\n", report.worst(), step, tolerance, pass ? "PASS" : "FAIL");
  }
  emit(text, c.out);
  if (!pass) {
    std::fprintf(stderr, "gradcheck: max relative error %.3e exceeds %g\n", report.worst(), tolerance);
    return kNumeric;
  }
  return kOk;
}

int runSweep(const TrainArgs& a, SweepSpec spec, const Common& c) {
  spec.base = resolveTrainConfig(a);
  const Dataset ds = loadDataset(a.dataset);
  const std::vector<SweepRow> rows = slp::runSweep(ds, spec);
  emit(c.format == "json" ? formatSweepJson(rows) : formatSweepTable(rows), c.out);
  return kOk;
}

void addTrainOptions(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--dataset", a.dataset, "dataset manifest")->required();
  cmd->add_option("--mode", a.mode, "cartesian or quaternion")->check(CLI::IsMember({"cartesian", "quaternion"}));
  cmd->add_option("--lambda", a.config.lambda, "contrastive weight");
  cmd->add_option("--tau", a.config.tau, "gloss contrastive temperature");
  cmd->add_option("--batch-size", a.config.batchSize);
  cmd->add_option("--lr", a.config.learningRate, "Adam learning rate");
  cmd->add_option("--epochs", a.config.epochs);
  cmd->add_option("--seed", a.config.seed);
  cmd->add_option("--preset", a.preset, "toy, tiny or full")->check(CLI::IsMember({"toy", "tiny", "full"}));
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Quaternion pose encoding, contrastive sign language production training and evaluation", "slpq"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string unusedConfig;
  app.add_option("--config", unusedConfig, "JSON file whose keys supply flags (explicit flags win)");
  int status = kOk;

  std::string skel;
  std::string input;
  std::string out;
  auto* enc = app.add_subcommand("encode", "pose file -> rotation file");
  enc->add_option("--skeleton", skel)->required();
  enc->add_option("--input", input)->required();
  enc->add_option("--out", out);
  enc->callback([&] { status = runEncode(skel, input, out); });

  auto* dec = app.add_subcommand("decode", "rotation file -> pose file");
  dec->add_option("--skeleton", skel)->required();
  dec->add_option("--input", input)->required();
  dec->add_option("--out", out);
  dec->callback([&] { status = runDecode(skel, input, out); });

  EvalArgs ev;
  auto* evalCmd = app.add_subcommand("eval", "metrics table (MJE, MBAE, PCK)");
  evalCmd->add_option("--skeleton", ev.skeleton);
  evalCmd->add_option("--pred", ev.pred, "predicted pose or rotation file (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  evalCmd->add_option("--gt", ev.gt, "ground-truth pose or rotation file (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  evalCmd->add_option("--checkpoint", ev.checkpoint, "evaluate generated sequences");
  evalCmd->add_option("--dataset", ev.dataset, "dataset manifest for --checkpoint");
  evalCmd->add_flag("--per-part", ev.perPart, "torso / left arm / right arm breakdown");
  addFormat(evalCmd, ev.common);
  evalCmd->callback([&] { status = runEval(ev); });

  LossArgs la;
  auto* lossCmd = app.add_subcommand("loss", "compute a named loss");
  lossCmd->add_option("--name", la.name, "mse_joints, geodesic, root, geodesic+root, gloss_supcon, sbert_supcon")
      ->required();
  lossCmd->add_option("--skeleton", la.skeleton);
  lossCmd->add_option("--pred", la.pred);
  lossCmd->add_option("--gt", la.gt);
  lossCmd->add_option("--latents", la.latents, "CSV of sample id then latent values");
  lossCmd->add_option("--glosses", la.glosses, "gloss TSV");
  lossCmd->add_option("--embeddings", la.embeddings, "sentence embedding CSV");
  lossCmd->add_option("--tau", la.tau);
  lossCmd->add_option("--out", la.out);
  lossCmd->callback([&] { status = runLoss(la); });

  SynthSpec spec;
  std::string synthOut;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--num-glosses", spec.numGlosses);
  synth->add_option("--num-sequences", spec.numSequences);
  synth->add_option("--frames", spec.framesPerSequence);
  synth->add_option("--min-glosses", spec.minGlossesPerSequence);
  synth->add_option("--max-glosses", spec.maxGlossesPerSequence);
  synth->add_option("--seed", spec.seed);
  synth->add_option("--out", synthOut, "output directory")->required();
  synth->callback([&] {
    saveDataset(synthDataset(spec), synthOut);
    status = kOk;
  });

  TrainArgs ta;
  auto* trainCmd = app.add_subcommand("train", "train a model; writes a checkpoint and a loss log");
  addTrainOptions(trainCmd, ta);
  trainCmd->add_option("--contrastive", ta.contrastive, "none, gloss or sentence")
      ->check(CLI::IsMember({"none", "gloss", "sentence"}));
  trainCmd->add_option("--out", ta.out, "checkpoint path")->required();
  trainCmd->add_option("--log", ta.log, "loss log path (line-delimited JSON)");
  trainCmd->add_flag("--quiet", ta.quiet, "no per-epoch log on standard error");
  trainCmd->callback([&] { status = runTrain(ta); });

  std::uint64_t gcSeed = 0;
  double gcStep = 1e-5;
  double gcTolerance = 1e-4;
  Common gcCommon;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check on the tiny model");
  gc->add_option("--seed", gcSeed);
  gc->add_option("--step", gcStep, "central difference step");
  gc->add_option("--tolerance", gcTolerance, "maximum allowed relative error");
  addFormat(gc, gcCommon);
  gc->callback([&] { status = runGradcheck(gcSeed, gcStep, gcTolerance, gcCommon); });

  TrainArgs sa;
  SweepSpec sweepSpec;
  Common sweepCommon;
  auto* sweep = app.add_subcommand("sweep", "train and evaluate the experiment grid");
  addTrainOptions(sweep, sa);
  sweep->add_option("--lambdas", sweepSpec.sentenceLambdas, "sentence contrastive weights")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  sweep->add_option("--batch-sizes", sweepSpec.sentenceBatchSizes, "sentence contrastive batch sizes")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  sweep->add_option("--gloss-lambda", sweepSpec.glossLambda);
  sweep->add_option("--jobs", sweepSpec.jobs, "concurrent training runs")->check(CLI::PositiveNumber);
  addFormat(sweep, sweepCommon);
  sweep->callback([&] { status = runSweep(sa, sweepSpec, sweepCommon); });

  std::vector<std::string> args(argv, argv + argc);
  args = expandConfig(args);
  std::reverse(args.begin(), args.end());
  args.pop_back();
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  return status;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
}
