#include "slp/checkpoint.h"

#include "slp/dataio.h"
#include "slp/errors.h"

#include <fmt/format.h>

#include <bit>
#include <cstring>

namespace slp {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'L', 'P', 'Q', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string getString() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) {
      throw DataError(fmt::format("{}: truncated checkpoint", source_));
    }
  }

  bool done() const {
    return pos_ == bytes_.size();
  }

 private:
  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

} // namespace

std::string serializeCheckpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const nlohmann::json meta = {
      {"config", ckpt.config},
      {"seed", ckpt.seed},
      {"step", ckpt.step},
      {"joint_names", ckpt.jointNames},
      {"metadata", ckpt.metadata}};
  const std::string metaText = meta.dump();
  put<std::uint64_t>(out, metaText.size());
  out += metaText;
  put<std::uint64_t>(out, ckpt.parameters.size());
  for (const auto& [name, t] : ckpt.parameters) {
    put<std::uint64_t>(out, name.size());
    out += name;
    put<std::uint64_t>(out, t.rows());
    put<std::uint64_t>(out, t.cols());
    for (double v : t.values()) {
      put<double>(out, v);
    }
  }
  return out;
}

Checkpoint deserializeCheckpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError(fmt::format("{}: not a checkpoint file", source));
  }
  const std::string body = bytes.substr(sizeof(kMagic));
  Reader r(body, source);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError(fmt::format("{}: unsupported checkpoint version {}", source, version));
  }
  Checkpoint ckpt;
  try {
    const nlohmann::json meta = nlohmann::json::parse(r.getString());
    ckpt.config = meta.at("config").get<ModelConfig>();
    ckpt.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.step = meta.at("step").get<std::uint64_t>();
    ckpt.jointNames = meta.at("joint_names").get<std::vector<std::string>>();
    ckpt.metadata = meta.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: bad checkpoint metadata ({})", source, e.what()));
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.getString();
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    r.need(rows * cols * sizeof(double));
    std::vector<double> values(rows * cols);
    for (double& v : values) {
      v = r.get<double>();
    }
    ckpt.parameters.emplace(std::move(name), ad::Tensor(rows, cols, std::move(values)));
  }
  if (!r.done()) {
    throw DataError(fmt::format("{}: trailing bytes after weights", source));
  }
  // Validates names and shapes against the config.
  Model(ckpt.config, ckpt.parameters);
  return ckpt;
}

void saveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  writeFileAtomic(path, serializeCheckpoint(ckpt));
}

Checkpoint loadCheckpoint(const std::filesystem::path& path) {
  return deserializeCheckpoint(readFile(path), path.string());
}

} // namespace slp
