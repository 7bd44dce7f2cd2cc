#include "slp/dataio.h"

#include "slp/errors.h"

#include "json.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace slp {

using nlohmann::json;

std::string formatDouble(double v) {
  return fmt::format("{:.17g}", v);
}

std::string readFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(fmt::format("{}: cannot open file", path.string()));
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void writeFileAtomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError(fmt::format("{}: cannot open for writing", tmp.string()));
    }
    out << contents;
    if (!out.flush()) {
      throw DataError(fmt::format("{}: write failed", tmp.string()));
    }
  }
  fs::rename(tmp, path);
}

namespace {

std::vector<std::string> splitLines(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    lines.push_back(line);
  }
  return lines;
}

bool isBlank(const std::string& s) {
  return s.find_first_not_of(" \t") == std::string::npos;
}

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& msg) {
  if (line == 0) {
    throw DataError(fmt::format("{}: {}", source, msg));
  }
  throw DataError(fmt::format("{}:{}: {}", source, line, msg));
}

json parseJson(const std::string& text, const std::string& source, std::size_t line) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(source, line, fmt::format("invalid JSON ({})", e.what()));
  }
}

const json& field(const json& obj, const char* name, const std::string& source, std::size_t line) {
  if (!obj.is_object() || !obj.contains(name)) {
    fail(source, line, fmt::format("missing field '{}'", name));
  }
  return obj.at(name);
}

double number(const json& v, const std::string& path, const std::string& source, std::size_t line) {
  if (!v.is_number()) {
    fail(source, line, fmt::format("{}: expected a number", path));
  }
  return v.get<double>();
}

std::size_t index(const json& v, const std::string& path, const std::string& source, std::size_t line) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    fail(source, line, fmt::format("{}: expected a non-negative integer", path));
  }
  return v.get<std::size_t>();
}

std::string str(const json& v, const std::string& path, const std::string& source, std::size_t line) {
  if (!v.is_string()) {
    fail(source, line, fmt::format("{}: expected a string", path));
  }
  return v.get<std::string>();
}

Vec3 vec3(const json& v, const std::string& path, const std::string& source, std::size_t line) {
  if (!v.is_array() || v.size() != 3) {
    fail(source, line, fmt::format("{}: expected [x, y, z]", path));
  }
  return {
      number(v[0], path + "[0]", source, line),
      number(v[1], path + "[1]", source, line),
      number(v[2], path + "[2]", source, line)};
}

const json& array(const json& v, const std::string& path, const std::string& source, std::size_t line) {
  if (!v.is_array()) {
    fail(source, line, fmt::format("{}: expected an array", path));
  }
  return v;
}

std::string quoted(const std::string& s) {
  return json(s).dump();
}

std::string vecText(const Vec3& v) {
  return fmt::format("[{}, {}, {}]", formatDouble(v.x()), formatDouble(v.y()), formatDouble(v.z()));
}

void checkHeader(const json& header, const char* format, const std::string& source) {
  if (str(field(header, "format", source, 1), "format", source, 1) != format) {
    fail(source, 1, fmt::format("expected format '{}'", format));
  }
  if (index(field(header, "version", source, 1), "version", source, 1) != 1) {
    fail(source, 1, "unsupported version");
  }
}

} // namespace

Skeleton parseSkeleton(const std::string& text, const std::string& source) {
  const json doc = parseJson(text, source, 0);
  const json& names = array(field(doc, "joint_names", source, 0), "joint_names", source, 0);
  const json& parents = array(field(doc, "parents", source, 0), "parents", source, 0);
  const json& tPose = array(field(doc, "t_pose", source, 0), "t_pose", source, 0);
  const json& shoulders = array(field(doc, "shoulders", source, 0), "shoulders", source, 0);
  const std::size_t root = index(field(doc, "root", source, 0), "root", source, 0);

  std::vector<std::string> jointNames;
  for (std::size_t i = 0; i < names.size(); ++i) {
    jointNames.push_back(str(names[i], fmt::format("joint_names[{}]", i), source, 0));
  }
  std::vector<std::optional<std::size_t>> parentIdx;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    if (parents[i].is_null()) {
      parentIdx.emplace_back(std::nullopt);
    } else {
      parentIdx.emplace_back(index(parents[i], fmt::format("parents[{}]", i), source, 0));
    }
  }
  std::vector<Vec3> positions;
  for (std::size_t i = 0; i < tPose.size(); ++i) {
    positions.push_back(vec3(tPose[i], fmt::format("t_pose[{}]", i), source, 0));
  }
  if (shoulders.size() != 2) {
    fail(source, 0, "shoulders: expected [left, right]");
  }
  const std::size_t left = index(shoulders[0], "shoulders[0]", source, 0);
  const std::size_t right = index(shoulders[1], "shoulders[1]", source, 0);
  try {
    return Skeleton::build(std::move(jointNames), std::move(parentIdx), std::move(positions), root, {left, right});
  } catch (const DataError& e) {
    fail(source, 0, e.what());
  }
}

Skeleton loadSkeleton(const fs::path& path) {
  return parseSkeleton(readFile(path), path.string());
}

std::string formatSkeleton(const Skeleton& s) {
  std::string out = "{\n  \"joint_names\": [";
  for (std::size_t j = 0; j < s.jointCount(); ++j) {
    out += (j ? ", " : "") + quoted(s.jointNames()[j]);
  }
  out += "],\n  \"parents\": [";
  for (std::size_t j = 0; j < s.jointCount(); ++j) {
    out += j ? ", " : "";
    out += s.parents()[j] ? std::to_string(*s.parents()[j]) : "null";
  }
  out += "],\n  \"t_pose\": [\n";
  for (std::size_t j = 0; j < s.jointCount(); ++j) {
    out += "    " + vecText(s.tPose()[j]) + (j + 1 < s.jointCount() ? ",\n" : "\n");
  }
  out += fmt::format(
      "  ],\n  \"root\": {},\n  \"shoulders\": [{}, {}]\n}}\n", s.root(), s.leftShoulder(), s.rightShoulder());
  return out;
}

void saveSkeleton(const Skeleton& skeleton, const fs::path& path) {
  writeFileAtomic(path, formatSkeleton(skeleton));
}

PoseFile parsePoseFile(const std::string& text, const std::string& source) {
  const std::vector<std::string> lines = splitLines(text);
  if (lines.empty() || isBlank(lines[0])) {
    fail(source, 1, "missing header line");
  }
  const json header = parseJson(lines[0], source, 1);
  checkHeader(header, "slp-pose", source);
  const json& jointsJson = array(field(header, "joints", source, 1), "joints", source, 1);
  std::vector<std::string> joints;
  for (std::size_t i = 0; i < jointsJson.size(); ++i) {
    joints.push_back(str(jointsJson[i], fmt::format("joints[{}]", i), source, 1));
  }
  std::vector<PoseFrame> frames;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (isBlank(lines[ln])) {
      if (ln + 1 == lines.size()) {
        break;
      }
      fail(source, ln + 1, "blank line inside frame data");
    }
    const json row = parseJson(lines[ln], source, ln + 1);
    if (!row.is_array() || row.size() != joints.size()) {
      fail(source, ln + 1, fmt::format(
          "expected {} joint positions, got {}", joints.size(), row.is_array() ? row.size() : 0));
    }
    PoseFrame f;
    for (std::size_t j = 0; j < row.size(); ++j) {
      f.push_back(vec3(row[j], fmt::format("joint {}", j), source, ln + 1));
    }
    frames.push_back(std::move(f));
  }
  if (frames.empty()) {
    fail(source, 0, "no frames");
  }
  return {std::move(joints), PoseSequence(std::move(frames))};
}

PoseFile loadPoseFile(const fs::path& path) {
  return parsePoseFile(readFile(path), path.string());
}

std::string formatPoseFile(const std::vector<std::string>& joints, const PoseSequence& seq) {
  if (joints.size() != seq.jointCount()) {
    throw DataError("joint name count does not match the sequence");
  }
  std::string out = "{\"format\":\"slp-pose\",\"version\":1,\"joints\":[";
  for (std::size_t j = 0; j < joints.size(); ++j) {
    out += (j ? "," : "") + quoted(joints[j]);
  }
  out += "]}\n";
  for (const PoseFrame& f : seq.frames()) {
    out += "[";
    for (std::size_t j = 0; j < f.size(); ++j) {
      out += (j ? "," : "") + vecText(f[j]);
    }
    out += "]\n";
  }
  return out;
}

void savePoseFile(const std::vector<std::string>& joints, const PoseSequence& seq, const fs::path& path) {
  writeFileAtomic(path, formatPoseFile(joints, seq));
}

RotationFile parseRotationFile(const std::string& text, const std::string& source) {
  const std::vector<std::string> lines = splitLines(text);
  if (lines.empty() || isBlank(lines[0])) {
    fail(source, 1, "missing header line");
  }
  const json header = parseJson(lines[0], source, 1);
  checkHeader(header, "slp-rotation", source);
  const json& bonesJson = array(field(header, "bones", source, 1), "bones", source, 1);
  std::vector<std::pair<std::string, std::string>> bones;
  for (std::size_t i = 0; i < bonesJson.size(); ++i) {
    const json& b = bonesJson[i];
    if (!b.is_array() || b.size() != 2) {
      fail(source, 1, fmt::format("bones[{}]: expected [parent, child]", i));
    }
    bones.emplace_back(
        str(b[0], fmt::format("bones[{}][0]", i), source, 1),
        str(b[1], fmt::format("bones[{}][1]", i), source, 1));
  }
  std::vector<std::vector<UnitQuaternion>> quats;
  std::vector<Vec3> roots;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (isBlank(lines[ln])) {
      if (ln + 1 == lines.size()) {
        break;
      }
      fail(source, ln + 1, "blank line inside frame data");
    }
    const json row = parseJson(lines[ln], source, ln + 1);
    roots.push_back(vec3(field(row, "root", source, ln + 1), "root", source, ln + 1));
    const json& q = array(field(row, "quats", source, ln + 1), "quats", source, ln + 1);
    if (q.size() != bones.size()) {
      fail(source, ln + 1, fmt::format("expected {} quaternions, got {}", bones.size(), q.size()));
    }
    std::vector<UnitQuaternion> frame;
    for (std::size_t b = 0; b < q.size(); ++b) {
      const std::string path = fmt::format("quats[{}]", b);
      if (!q[b].is_array() || q[b].size() != 4) {
        fail(source, ln + 1, path + ": expected [w, x, y, z]");
      }
      try {
        frame.emplace_back(
            number(q[b][0], path, source, ln + 1),
            number(q[b][1], path, source, ln + 1),
            number(q[b][2], path, source, ln + 1),
            number(q[b][3], path, source, ln + 1));
      } catch (const DataError& e) {
        if (std::string(e.what()).starts_with(source)) {
          throw;
        }
        fail(source, ln + 1, path + ": " + e.what());
      }
    }
    quats.push_back(std::move(frame));
  }
  if (quats.empty()) {
    fail(source, 0, "no frames");
  }
  return {std::move(bones), RotationSequence(std::move(quats), std::move(roots))};
}

RotationFile loadRotationFile(const fs::path& path) {
  return parseRotationFile(readFile(path), path.string());
}

std::string formatRotationFile(const Skeleton& skeleton, const RotationSequence& rots) {
  if (rots.boneCount() != skeleton.boneCount()) {
    throw DataError("rotation sequence bone count does not match the skeleton");
  }
  std::string out = "{\"format\":\"slp-rotation\",\"version\":1,\"bones\":[";
  for (std::size_t b = 0; b < skeleton.boneCount(); ++b) {
    const Bone& bone = skeleton.bones()[b];
    out += fmt::format(
        "{}[{},{}]",
        b ? "," : "",
        quoted(skeleton.jointNames()[bone.parent]),
        quoted(skeleton.jointNames()[bone.child]));
  }
  out += "]}\n";
  for (std::size_t t = 0; t < rots.frameCount(); ++t) {
    out += "{\"root\":" + vecText(rots.rootPositions()[t]) + ",\"quats\":[";
    for (std::size_t b = 0; b < rots.boneCount(); ++b) {
      const auto c = rots.quats()[t][b].coeffs();
      out += fmt::format(
          "{}[{}, {}, {}, {}]",
          b ? "," : "",
          formatDouble(c[0]),
          formatDouble(c[1]),
          formatDouble(c[2]),
          formatDouble(c[3]));
    }
    out += "]}\n";
  }
  return out;
}

void saveRotationFile(const Skeleton& skeleton, const RotationSequence& rots, const fs::path& path) {
  writeFileAtomic(path, formatRotationFile(skeleton, rots));
}

int Vocabulary::intern(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos) {
    throw DataError(fmt::format("invalid gloss token '{}'", token));
  }
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) {
    tokens_.push_back(token);
  }
  return it->second;
}

std::optional<int> Vocabulary::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) {
    return std::nullopt;
  }
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  return tokens_.at(static_cast<std::size_t>(id));
}

std::string Vocabulary::format() const {
  std::string out;
  for (const std::string& t : tokens_) {
    out += t + "\n";
  }
  return out;
}

Vocabulary Vocabulary::parse(const std::string& text, const std::string& source) {
  Vocabulary v;
  const std::vector<std::string> lines = splitLines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty() && ln + 1 == lines.size()) {
      break;
    }
    if (v.find(lines[ln])) {
      fail(source, ln + 1, fmt::format("duplicate token '{}'", lines[ln]));
    }
    try {
      v.intern(lines[ln]);
    } catch (const DataError& e) {
      fail(source, ln + 1, e.what());
    }
  }
  return v;
}

Vocabulary loadVocabulary(const fs::path& path) {
  return Vocabulary::parse(readFile(path), path.string());
}

void saveVocabulary(const Vocabulary& vocab, const fs::path& path) {
  writeFileAtomic(path, vocab.format());
}

std::vector<GlossRow> parseGlossTsv(const std::string& text, const std::string& source) {
  std::vector<GlossRow> rows;
  std::set<std::string> seen;
  const std::vector<std::string> lines = splitLines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty() && ln + 1 == lines.size()) {
      break;
    }
    const std::size_t tab = lines[ln].find('\t');
    if (tab == std::string::npos) {
      fail(source, ln + 1, "expected '<id>\\t<glosses>'");
    }
    GlossRow row;
    row.id = lines[ln].substr(0, tab);
    if (row.id.empty()) {
      fail(source, ln + 1, "empty sample id");
    }
    if (!seen.insert(row.id).second) {
      fail(source, ln + 1, fmt::format("duplicate sample id '{}'", row.id));
    }
    std::istringstream tokens(lines[ln].substr(tab + 1));
    std::string tok;
    while (tokens >> tok) {
      row.tokens.push_back(tok);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<GlossRow> loadGlossTsv(const fs::path& path) {
  return parseGlossTsv(readFile(path), path.string());
}

std::string formatGlossTsv(const std::vector<GlossRow>& rows) {
  std::string out;
  for (const GlossRow& r : rows) {
    out += r.id + "\t";
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
      out += (i ? " " : "") + r.tokens[i];
    }
    out += "\n";
  }
  return out;
}

std::vector<EmbeddingRow> parseEmbeddingCsv(const std::string& text, const std::string& source) {
  constexpr std::size_t kColumns = 384;
  std::vector<EmbeddingRow> rows;
  std::set<std::string> seen;
  const std::vector<std::string> lines = splitLines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty() && ln + 1 == lines.size()) {
      break;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(lines[ln]);
    while (std::getline(in, cell, ',')) {
      cells.push_back(cell);
    }
    if (!lines[ln].empty() && lines[ln].back() == ',') {
      cells.emplace_back();
    }
    if (cells.size() != kColumns + 1) {
      fail(source, ln + 1, fmt::format(
          "expected {} columns after the sample id, got {}", kColumns, cells.empty() ? 0 : cells.size() - 1));
    }
    EmbeddingRow row;
    row.id = cells[0];
    if (row.id.empty()) {
      fail(source, ln + 1, "empty sample id");
    }
    if (!seen.insert(row.id).second) {
      fail(source, ln + 1, fmt::format("duplicate sample id '{}'", row.id));
    }
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const std::string& s = cells[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size()) {
        fail(source, ln + 1, fmt::format("column {}: '{}' is not a number", c + 1, s));
      }
      row.values.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<EmbeddingRow> loadEmbeddingCsv(const fs::path& path) {
  return parseEmbeddingCsv(readFile(path), path.string());
}

std::string formatEmbeddingCsv(const std::vector<EmbeddingRow>& rows) {
  std::string out;
  for (const EmbeddingRow& r : rows) {
    out += r.id;
    for (double v : r.values) {
      out += "," + formatDouble(v);
    }
    out += "\n";
  }
  return out;
}

Dataset loadDataset(const fs::path& manifestPath) {
  const std::string source = manifestPath.string();
  const json doc = parseJson(readFile(manifestPath), source, 0);
  const fs::path base = manifestPath.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  Dataset ds{loadSkeleton(resolve(str(field(doc, "skeleton", source, 0), "skeleton", source, 0))), {}, {}};
  if (doc.contains("vocabulary")) {
    ds.vocabulary = loadVocabulary(resolve(str(doc["vocabulary"], "vocabulary", source, 0)));
  }
  std::vector<EmbeddingRow> embeddings;
  if (doc.contains("embeddings")) {
    embeddings = loadEmbeddingCsv(resolve(str(doc["embeddings"], "embeddings", source, 0)));
  }
  const json& samples = array(field(doc, "samples", source, 0), "samples", source, 0);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const json& s = samples[i];
    const std::string where = fmt::format("samples[{}]", i);
    if (!s.is_object()) {
      fail(source, 0, where + ": expected an object");
    }
    const std::string id = str(field(s, "id", source, 0), where + ".id", source, 0);
    if (!ids.insert(id).second) {
      fail(source, 0, fmt::format("duplicate sample id '{}'", id));
    }
    PoseFile pf = loadPoseFile(resolve(str(field(s, "pose", source, 0), where + ".pose", source, 0)));
    if (pf.joints != ds.skeleton.jointNames()) {
      fail(source, 0, fmt::format("{}: pose joints do not match the skeleton", where));
    }
    AnnotatedSample sample{id, std::move(pf.sequence), {}, {}};
    std::istringstream tokens(str(field(s, "glosses", source, 0), where + ".glosses", source, 0));
    std::string tok;
    while (tokens >> tok) {
      sample.glosses.push_back(ds.vocabulary.intern(tok));
    }
    if (s.contains("embedding_row") && !s["embedding_row"].is_null()) {
      const std::size_t row = index(s["embedding_row"], where + ".embedding_row", source, 0);
      if (row >= embeddings.size()) {
        fail(source, 0, fmt::format("{}: embedding_row {} out of range ({} rows)", where, row, embeddings.size()));
      }
      sample.sentenceEmbedding = embeddings[row].values;
    }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

void saveDataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "poses");
  saveSkeleton(dataset.skeleton, dir / "skeleton.json");
  saveVocabulary(dataset.vocabulary, dir / "vocab.txt");

  std::vector<GlossRow> glossRows;
  std::vector<EmbeddingRow> embeddingRows;
  json samples = json::array();
  for (const AnnotatedSample& s : dataset.samples) {
    GlossRow g{s.id, {}};
    for (int id : s.glosses) {
      g.tokens.push_back(dataset.vocabulary.token(id));
    }
    std::string glossText;
    for (std::size_t i = 0; i < g.tokens.size(); ++i) {
      glossText += (i ? " " : "") + g.tokens[i];
    }
    const std::string posePath = "poses/" + s.id + ".jsonl";
    savePoseFile(dataset.skeleton.jointNames(), s.poses, dir / posePath);
    json entry = {{"id", s.id}, {"pose", posePath}, {"glosses", glossText}};
    if (!s.sentenceEmbedding.empty()) {
      entry["embedding_row"] = embeddingRows.size();
      embeddingRows.push_back({s.id, s.sentenceEmbedding});
    }
    samples.push_back(std::move(entry));
    glossRows.push_back(std::move(g));
  }
  writeFileAtomic(dir / "glosses.tsv", formatGlossTsv(glossRows));
  json manifest = {{"skeleton", "skeleton.json"}, {"vocabulary", "vocab.txt"}, {"samples", samples}};
  if (!embeddingRows.empty()) {
    writeFileAtomic(dir / "embeddings.csv", formatEmbeddingCsv(embeddingRows));
    manifest["embeddings"] = "embeddings.csv";
  }
  writeFileAtomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

} // namespace slp
