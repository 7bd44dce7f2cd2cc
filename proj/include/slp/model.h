#pragma once

#include "slp/autodiff.h"
#include "slp/rotation.h"
#include "slp/skeleton.h"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace slp {

enum class OutputMode { Cartesian, Quaternion };

std::string toString(OutputMode mode);
OutputMode outputModeFromString(const std::string& name);

struct ModelConfig {
  std::size_t numLayers = 2;
  std::size_t numHeads = 2;
  std::size_t embedDim = 64;
  std::size_t feedforwardDim = 128;
  std::size_t vocabSize = 0;
  OutputMode outputMode = OutputMode::Quaternion;
  std::size_t maxFrames = 64;
  double dropoutRate = 0.0;
  bool counterEnabled = true;
  // Frame layout of the skeleton the model is trained for.
  std::size_t jointCount = 0;
  std::size_t boneCount = 0;

  // 2 layers, 2 heads, 64 dims, feedforward 128.
  static ModelConfig toy(std::size_t vocabSize, const Skeleton& skeleton, OutputMode mode);
  // 2 layers, 4 heads, 512 dims, feedforward 2048.
  static ModelConfig fullScale(std::size_t vocabSize, const Skeleton& skeleton, OutputMode mode);
  // Small enough for exhaustive finite-difference checks.
  static ModelConfig tiny(std::size_t vocabSize, const Skeleton& skeleton, OutputMode mode);

  void validate() const;

  // Pose values per frame: 3 * joints, or 4 * bones + 3 root coordinates.
  std::size_t poseWidth() const;
  // Pose values plus the counter when enabled.
  std::size_t frameWidth() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

inline constexpr double kCounterStopThreshold = 1.0 - 1e-3;
inline constexpr std::size_t kProjectionDim = 384;

// Named weight arrays; std::map keeps iteration order stable.
using ParameterSet = std::map<std::string, ad::Tensor>;

class Model {
 public:
  // Xavier-uniform weights drawn from `seed`; biases zero, norm gains one.
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, ParameterSet parameters);

  const ModelConfig& config() const {
    return config_;
  }
  const ParameterSet& parameters() const {
    return parameters_;
  }
  ParameterSet& parameters() {
    return parameters_;
  }
  std::size_t parameterCount() const;

 private:
  ModelConfig config_;
  ParameterSet parameters_;
};

/// Per decoder layer, one T x embedDim block per sample, tapped after the
/// self-attention sublayer's residual and normalization.
struct LatentStack {
  std::vector<std::vector<ad::Var>> layers;
};

struct DecoderPass {
  ad::Var output;                  // T x frameWidth
  std::vector<ad::Var> latents;    // per layer, T x embedDim
};

/// Binds a Model's weights to a tape. Trainable graphs record weights as
/// variables so backward() yields their gradients.
class ModelGraph {
 public:
  ModelGraph(const Model& model, ad::Tape& tape, bool trainable, std::mt19937_64* dropoutRng = nullptr);

  /// N_src x embedDim memory. Throws DataError on empty or out-of-vocabulary input.
  ad::Var encode(std::span<const int> glosses);

  /// Causal decoder over `inputs` (T x frameWidth).
  DecoderPass decode(ad::Var inputs, ad::Var memory);

  /// Temporal mean pooling then the shared 384-dim affine head.
  ad::Var project(ad::Var latent);

  ad::Var param(const std::string& name);
  const std::map<std::string, ad::Var>& bound() const {
    return bound_;
  }
  ad::Tape& tape() {
    return tape_;
  }

 private:
  ad::Var attention(
      const std::string& prefix,
      ad::Var queries,
      ad::Var keys,
      const ad::Tensor* mask);
  ad::Var feedForward(const std::string& prefix, ad::Var x);
  ad::Var layerNorm(const std::string& prefix, ad::Var x);
  ad::Var linear(const std::string& prefix, ad::Var x);
  ad::Var dropout(ad::Var x);

  const Model& model_;
  ad::Tape& tape_;
  bool trainable_;
  std::mt19937_64* dropoutRng_;
  std::map<std::string, ad::Var> bound_;
};

/// Per-layer N x 384 projections, one row per sample.
std::vector<ad::Var> projectLatents(const LatentStack& stack, ModelGraph& graph);
/// Per-layer N x embedDim temporal means, one row per sample.
std::vector<ad::Var> poolLatents(const LatentStack& stack);

// Target frames: each pose row followed by the counter t / (T - 1)
// (1 for a single frame).
ad::Tensor framesFromPoses(const PoseSequence& seq, bool counter);
ad::Tensor framesFromRotations(const RotationSequence& rots, bool counter);
// Decoder input for teacher forcing: zero start frame, then every target
// row but the last.
ad::Tensor teacherForcedInputs(const ad::Tensor& targets);

PoseSequence posesFromFrames(const ad::Tensor& frames, std::size_t jointCount);
// Quaternion blocks are renormalized.
RotationSequence rotationsFromFrames(const ad::Tensor& frames, std::size_t boneCount);

struct StepResult {
  std::vector<double> frame;           // frameWidth values
  std::vector<ad::Tensor> latents;     // per layer, 1 x embedDim
};

/// Next frame given a history that starts with the zero start frame.
StepResult decodeStep(const Model& model, const ad::Tensor& history, const ad::Tensor& memory);

/// Encoder memory without gradient tracking.
ad::Tensor encodeGlosses(const Model& model, std::span<const int> glosses);

struct Generation {
  ad::Tensor frames;       // emitted frames, quaternions renormalized
  bool truncated = false;  // stopped at maxFrames without reaching the counter threshold
};

/// Autoregressive rollout from the zero start frame. Stops after the first
/// frame whose counter reaches kCounterStopThreshold (that frame included)
/// or after maxFrames frames.
Generation generate(const Model& model, std::span<const int> glosses);

} // namespace slp
