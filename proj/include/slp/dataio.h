#pragma once

#include "slp/rotation.h"
#include "slp/skeleton.h"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace slp {

namespace fs = std::filesystem;

// Every loader throws DataError whose message names the file and, for
// line-oriented formats, the 1-based line number.

/// Skeleton JSON: {"joint_names", "parents" (null for the root), "t_pose",
/// "root", "shoulders": [left, right]}.
Skeleton loadSkeleton(const fs::path& path);
Skeleton parseSkeleton(const std::string& text, const std::string& source = "<skeleton>");
std::string formatSkeleton(const Skeleton& skeleton);
void saveSkeleton(const Skeleton& skeleton, const fs::path& path);

/// Pose file: header line {"format":"slp-pose","version":1,"joints":[...]},
/// then one JSON array of [x, y, z] triples per frame.
struct PoseFile {
  std::vector<std::string> joints;
  PoseSequence sequence;
};
PoseFile loadPoseFile(const fs::path& path);
PoseFile parsePoseFile(const std::string& text, const std::string& source = "<poses>");
std::string formatPoseFile(const std::vector<std::string>& joints, const PoseSequence& seq);
void savePoseFile(const std::vector<std::string>& joints, const PoseSequence& seq, const fs::path& path);

/// Rotation file: header {"format":"slp-rotation","version":1,"bones":[[parent, child], ...]}
/// with joint names, then {"root":[x,y,z],"quats":[[w,x,y,z], ...]} per frame.
struct RotationFile {
  std::vector<std::pair<std::string, std::string>> bones;
  RotationSequence sequence;
};
RotationFile loadRotationFile(const fs::path& path);
RotationFile parseRotationFile(const std::string& text, const std::string& source = "<rotations>");
std::string formatRotationFile(const Skeleton& skeleton, const RotationSequence& rots);
void saveRotationFile(const Skeleton& skeleton, const RotationSequence& rots, const fs::path& path);

/// Token -> id interning in first-seen order. The file form is one token per
/// line, line k holding id k.
class Vocabulary {
 public:
  int intern(const std::string& token);
  std::optional<int> find(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const {
    return tokens_.size();
  }
  const std::vector<std::string>& tokens() const {
    return tokens_;
  }
  std::string format() const;

  static Vocabulary parse(const std::string& text, const std::string& source = "<vocabulary>");

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};
Vocabulary loadVocabulary(const fs::path& path);
void saveVocabulary(const Vocabulary& vocab, const fs::path& path);

/// Gloss TSV: "<sample id>\t<whitespace-separated tokens>" per line.
struct GlossRow {
  std::string id;
  std::vector<std::string> tokens;
};
std::vector<GlossRow> parseGlossTsv(const std::string& text, const std::string& source = "<glosses>");
std::vector<GlossRow> loadGlossTsv(const fs::path& path);
std::string formatGlossTsv(const std::vector<GlossRow>& rows);

/// Embedding CSV: "<sample id>,<384 floats>" per line.
struct EmbeddingRow {
  std::string id;
  std::vector<double> values;
};
std::vector<EmbeddingRow> parseEmbeddingCsv(const std::string& text, const std::string& source = "<embeddings>");
std::vector<EmbeddingRow> loadEmbeddingCsv(const fs::path& path);
std::string formatEmbeddingCsv(const std::vector<EmbeddingRow>& rows);

/// One training/evaluation example.
struct AnnotatedSample {
  std::string id;
  PoseSequence poses;
  std::vector<int> glosses;
  std::vector<double> sentenceEmbedding;  // empty when absent
};

struct Dataset {
  Skeleton skeleton;
  Vocabulary vocabulary;
  std::vector<AnnotatedSample> samples;
};

/// Manifest JSON: {"skeleton", "embeddings" (optional), "vocabulary"
/// (optional), "samples": [{"id", "pose", "glosses", "embedding_row"}]}.
/// Relative paths resolve against the manifest's directory.
Dataset loadDataset(const fs::path& manifest);
/// Writes manifest.json, skeleton.json, vocab.txt, glosses.tsv,
/// embeddings.csv and poses/<id>.jsonl under `dir`.
void saveDataset(const Dataset& dataset, const fs::path& dir);

// Text helpers.
std::string formatDouble(double v);
std::string readFile(const fs::path& path);
// Writes to a temporary sibling and renames it into place.
void writeFileAtomic(const fs::path& path, const std::string& contents);

} // namespace slp
