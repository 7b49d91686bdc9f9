#include <bit>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "treecarbon/geotiff.hpp"
#include "treecarbon/learn.hpp"

namespace treecarbon {
namespace {

static_assert(std::endian::native == std::endian::little, "model codec assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      fail(ErrorKind::Deserialization, fmt::format("truncated model at byte {}", pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t hash) {
  for (auto b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::vector<std::uint8_t> save_model(const RandomForestModel& model) {
  model.validate();
  Writer w;
  w.bytes = {'T', 'C', 'R', 'F'};
  w.put<std::uint32_t>(kModelFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.n_features));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.classes.size()));
  for (const auto& c : model.classes) w.put_string(c);
  w.put<std::uint64_t>(model.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.params.n_trees));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.params.max_depth));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.params.min_leaf));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.params.features_per_split));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.feature_window));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.trees.size()));
  for (const auto& tree : model.trees) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& n : tree.nodes) {
      w.put<std::int32_t>(n.feature);
      w.put<double>(n.threshold);
      w.put<std::int32_t>(n.left);
      w.put<std::int32_t>(n.right);
      if (n.is_leaf()) {
        for (auto c : n.histogram) w.put<std::uint32_t>(c);
      }
    }
  }
  w.put<std::uint64_t>(fnv1a(w.bytes));
  return std::move(w.bytes);
}

RandomForestModel load_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "TCRF", 4) != 0) {
    fail(ErrorKind::Deserialization, "not a random forest model (missing TCRF magic)");
  }
  if (bytes.size() < 16) fail(ErrorKind::Deserialization, "truncated model");
  const auto body = bytes.first(bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);

  Reader r(body.subspan(4));
  const auto version = r.get<std::uint32_t>();
  if (version != kModelFormatVersion) {
    fail(ErrorKind::Deserialization,
         fmt::format("unsupported model format version {} (expected {})", version, kModelFormatVersion));
  }
  if (fnv1a(body) != stored) fail(ErrorKind::Deserialization, "model checksum mismatch");

  RandomForestModel model;
  model.n_features = static_cast<int>(r.get<std::uint32_t>());
  const auto n_classes = r.get<std::uint32_t>();
  if (n_classes > r.remaining()) fail(ErrorKind::Deserialization, "implausible class count");
  for (std::uint32_t i = 0; i < n_classes; ++i) model.classes.push_back(r.get_string());
  model.seed = r.get<std::uint64_t>();
  model.params.n_trees = static_cast<int>(r.get<std::uint32_t>());
  model.params.max_depth = static_cast<int>(r.get<std::uint32_t>());
  model.params.min_leaf = static_cast<int>(r.get<std::uint32_t>());
  model.params.features_per_split = static_cast<int>(r.get<std::uint32_t>());
  model.feature_window = static_cast<int>(r.get<std::uint32_t>());
  const auto n_trees = r.get<std::uint32_t>();
  if (n_trees > r.remaining()) fail(ErrorKind::Deserialization, "implausible tree count");
  model.trees.resize(n_trees);
  for (auto& tree : model.trees) {
    const auto n_nodes = r.get<std::uint32_t>();
    if (n_nodes > r.remaining()) fail(ErrorKind::Deserialization, "implausible node count");
    tree.nodes.resize(n_nodes);
    for (auto& n : tree.nodes) {
      n.feature = r.get<std::int32_t>();
      n.threshold = r.get<double>();
      n.left = r.get<std::int32_t>();
      n.right = r.get<std::int32_t>();
      if (n.is_leaf()) {
        n.histogram.resize(n_classes);
        for (auto& c : n.histogram) c = r.get<std::uint32_t>();
      }
    }
  }
  if (r.remaining() != 0) {
    fail(ErrorKind::Deserialization, fmt::format("{} trailing bytes after model", r.remaining()));
  }
  try {
    model.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Deserialization, fmt::format("inconsistent model: {}", e.what()));
  }
  return model;
}

void save_model(const RandomForestModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, save_model(model));
}

RandomForestModel load_model(const std::filesystem::path& path) {
  return load_model(read_file_bytes(path));
}

}  // namespace treecarbon
