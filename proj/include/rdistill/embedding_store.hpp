#pragma once

// Per-sequence embedding matrices, the EMB1 on-disk format, JSON manifests,
// and stacking of variable-length sequences into one training matrix.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rdistill/binary_io.hpp"
#include "rdistill/error.hpp"

namespace rdistill {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Row-major float storage, matching the EMB1 payload layout.
using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One sequence's embedding: row = residue position, column = feature.
struct EmbeddingMatrix {
  std::string seq_id;
  FloatMatrix values;

  Eigen::Index n() const { return values.rows(); }
  Eigen::Index k() const { return values.cols(); }

  bool all_finite() const { return values.allFinite(); }

  void validate() const {
    if (n() < 1 || k() < 1) throw InputError("embedding '" + seq_id + "' has an empty shape");
    if (!all_finite()) throw InputError("embedding '" + seq_id + "' contains a non-finite value");
  }

  /// Bitwise equality (distinguishes +0/-0 and compares NaN payloads).
  friend bool bitwise_equal(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    if (a.seq_id != b.seq_id || a.n() != b.n() || a.k() != b.k()) return false;
    return std::memcmp(a.values.data(), b.values.data(), sizeof(float) * a.values.size()) == 0;
  }
};

inline EmbeddingMatrix make_embedding(std::string seq_id, const Eigen::MatrixXd& values) {
  return {std::move(seq_id), values.cast<float>()};
}

// ---------------------------------------------------------------------------
// EMB1 format
//
//   "EMB1" | u32 version=1 | u16 id_len | id bytes | u32 n | u32 k | u8 dtype=1
//   | n*k float32, row-major; little-endian throughout.

inline constexpr std::uint32_t kEmbVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;
inline constexpr std::uint8_t kDtypeFloat64 = 2;

inline std::vector<char> encode_embedding(const EmbeddingMatrix& m) {
  if (!m.all_finite()) throw InputError("embedding '" + m.seq_id + "': non-finite value");
  if (m.n() < 1 || m.k() < 1) throw InputError("embedding '" + m.seq_id + "': empty shape");
  if (m.seq_id.size() > UINT16_MAX) throw InputError("seq_id longer than 65535 bytes");
  detail::ByteWriter w;
  w.bytes("EMB1");
  w.u32(kEmbVersion);
  w.u16(static_cast<std::uint16_t>(m.seq_id.size()));
  w.bytes(m.seq_id);
  w.u32(static_cast<std::uint32_t>(m.n()));
  w.u32(static_cast<std::uint32_t>(m.k()));
  w.u8(kDtypeFloat32);
  const float* p = m.values.data();
  for (Eigen::Index i = 0; i < m.values.size(); ++i) w.f32(p[i]);
  return w.buffer();
}

inline EmbeddingMatrix decode_embedding(const std::vector<char>& data, const std::string& context) {
  detail::ByteReader r(data, context);
  if (data.size() < 4 || r.bytes(4) != "EMB1") throw InputError(context + ": bad magic");
  const auto version = r.u32();
  if (version != kEmbVersion)
    throw InputError(context + ": version mismatch (got " + std::to_string(version) + ")");
  const auto id_len = r.u16();
  EmbeddingMatrix m;
  m.seq_id = r.bytes(id_len);
  const std::uint64_t n = r.u32();
  const std::uint64_t k = r.u32();
  const auto dtype = r.u8();
  if (dtype != kDtypeFloat32)
    throw InputError(context + ": unsupported dtype code " + std::to_string(dtype));
  if (n == 0 || k == 0) throw InputError(context + ": empty shape");
  const std::uint64_t payload = n * k * 4;
  if (r.remaining() < payload) throw InputError(context + ": truncated payload");
  if (r.remaining() > payload) throw InputError(context + ": trailing bytes after payload");
  m.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  float* p = m.values.data();
  for (std::uint64_t i = 0; i < n * k; ++i) p[i] = r.f32();
  if (!m.all_finite()) throw InputError(context + ": non-finite value");
  return m;
}

inline void write_embedding(const EmbeddingMatrix& m, const fs::path& path) {
  detail::write_file(path, encode_embedding(m));
}

inline EmbeddingMatrix read_embedding(const fs::path& path) {
  return decode_embedding(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Sets and hierarchies

/// All embeddings produced by one model, in manifest order.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  EmbeddingSet(std::string model_tag, Eigen::Index k) : model_tag_(std::move(model_tag)), k_(k) {
    if (k < 1) throw InputError("embedding set '" + model_tag_ + "': dim must be positive");
  }

  void add(EmbeddingMatrix m) {
    if (m.k() != k_)
      throw InputError("seq_id '" + m.seq_id + "' has dim " + std::to_string(m.k()) +
                       " but set '" + model_tag_ + "' has dim " + std::to_string(k_));
    if (index_.contains(m.seq_id))
      throw InputError("duplicate seq_id '" + m.seq_id + "' in set '" + model_tag_ + "'");
    m.validate();
    index_.emplace(m.seq_id, entries_.size());
    entries_.push_back(std::move(m));
  }

  const std::string& model_tag() const { return model_tag_; }
  Eigen::Index k() const { return k_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const std::vector<EmbeddingMatrix>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  const EmbeddingMatrix* find(const std::string& seq_id) const {
    auto it = index_.find(seq_id);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }
  const EmbeddingMatrix& at(const std::string& seq_id) const {
    if (auto* m = find(seq_id)) return *m;
    throw InputError("seq_id '" + seq_id + "' not found in set '" + model_tag_ + "'");
  }

 private:
  std::string model_tag_;
  Eigen::Index k_ = 0;
  std::vector<EmbeddingMatrix> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ModelLevel {
  std::string tag;
  Eigen::Index dim = 0;
  friend bool operator==(const ModelLevel&, const ModelLevel&) = default;
};

/// Ordered model family with strictly increasing embedding widths.
class ModelHierarchy {
 public:
  ModelHierarchy() = default;
  explicit ModelHierarchy(std::vector<ModelLevel> levels) : levels_(std::move(levels)) {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      if (levels_[i].dim < 1) throw InputError("level '" + levels_[i].tag + "': dim must be positive");
      for (std::size_t j = 0; j < i; ++j)
        if (levels_[j].tag == levels_[i].tag)
          throw InputError("duplicate model tag '" + levels_[i].tag + "'");
      if (i > 0 && levels_[i].dim <= levels_[i - 1].dim)
        throw InputError("non-increasing dims: '" + levels_[i - 1].tag + "' (" +
                         std::to_string(levels_[i - 1].dim) + ") then '" + levels_[i].tag + "' (" +
                         std::to_string(levels_[i].dim) + ")");
    }
  }

  const std::vector<ModelLevel>& levels() const { return levels_; }
  std::size_t size() const { return levels_.size(); }
  const ModelLevel& operator[](std::size_t i) const { return levels_[i]; }
  const ModelLevel& top() const { return levels_.back(); }

  std::vector<Eigen::Index> dims() const {
    std::vector<Eigen::Index> d;
    for (const auto& l : levels_) d.push_back(l.dim);
    return d;
  }

  ModelHierarchy truncated(std::size_t count) const {
    return ModelHierarchy({levels_.begin(), levels_.begin() + static_cast<std::ptrdiff_t>(count)});
  }

  friend bool operator==(const ModelHierarchy&, const ModelHierarchy&) = default;

 private:
  std::vector<ModelLevel> levels_;
};

// ---------------------------------------------------------------------------
// Stacking

struct RowSpan {
  std::string seq_id;
  Eigen::Index row_start = 0;
  Eigen::Index row_count = 0;
  friend bool operator==(const RowSpan&, const RowSpan&) = default;
};

/// Vertically stacked embeddings of a whole set; rows are residues.
struct StackedMatrix {
  Eigen::MatrixXd values;
  std::vector<RowSpan> offsets;

  Eigen::Index total_rows() const { return values.rows(); }
};

inline StackedMatrix stack(const EmbeddingSet& set) {
  if (set.empty()) throw InputError("cannot stack an empty set");
  Eigen::Index total = 0;
  for (const auto& e : set) total += e.n();
  StackedMatrix out;
  out.values.resize(total, set.k());
  Eigen::Index row = 0;
  for (const auto& e : set) {
    out.values.middleRows(row, e.n()) = e.values.cast<double>();
    out.offsets.push_back({e.seq_id, row, e.n()});
    row += e.n();
  }
  return out;
}

/// Inverse of stack. Exact when the values originated from float32.
inline EmbeddingSet unstack(const StackedMatrix& stacked, const std::string& model_tag) {
  EmbeddingSet set(model_tag, stacked.values.cols());
  for (const auto& span : stacked.offsets)
    set.add({span.seq_id, stacked.values.middleRows(span.row_start, span.row_count).cast<float>()});
  return set;
}

// ---------------------------------------------------------------------------
// Alignment between two sets

struct AlignmentReport {
  bool aligned = false;
  std::vector<std::string> common;  ///< ids in both sets with equal lengths
  std::vector<std::string> length_mismatch;
  std::vector<std::string> only_in_a;
  std::vector<std::string> only_in_b;
  bool order_differs = false;

  std::string summary() const {
    std::string s = aligned ? "aligned" : "not aligned";
    auto list = [&](const char* label, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      s += std::string("; ") + label + ":";
      for (std::size_t i = 0; i < ids.size() && i < 5; ++i) s += " " + ids[i];
      if (ids.size() > 5) s += " ...";
    };
    list("length mismatch", length_mismatch);
    list("only in first", only_in_a);
    list("only in second", only_in_b);
    if (order_differs) s += "; seq_id order differs";
    return s;
  }
};

inline AlignmentReport validate_aligned(const EmbeddingSet& a, const EmbeddingSet& b) {
  AlignmentReport rep;
  for (const auto& e : a) {
    const auto* other = b.find(e.seq_id);
    if (!other)
      rep.only_in_a.push_back(e.seq_id);
    else if (other->n() != e.n())
      rep.length_mismatch.push_back(e.seq_id);
    else
      rep.common.push_back(e.seq_id);
  }
  for (const auto& e : b)
    if (!a.find(e.seq_id)) rep.only_in_b.push_back(e.seq_id);
  if (a.size() == b.size()) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.entries()[i].seq_id != b.entries()[i].seq_id) rep.order_differs = true;
  }
  rep.aligned = rep.length_mismatch.empty() && rep.only_in_a.empty() && rep.only_in_b.empty() &&
                !rep.order_differs && !a.empty();
  return rep;
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
  std::string seq_id;
  std::string path;  ///< relative to the manifest's directory unless absolute
  Eigen::Index length = 0;
};

struct Manifest {
  std::string model_tag;
  Eigen::Index dim = 0;
  std::vector<ManifestEntry> entries;
  /// Keys other than the three required ones (level_dims, chain_hash, ...).
  json extra = json::object();

  json to_json() const {
    json j = extra;
    j["model_tag"] = model_tag;
    j["dim"] = dim;
    j["entries"] = json::array();
    for (const auto& e : entries)
      j["entries"].push_back({{"seq_id", e.seq_id}, {"path", e.path}, {"length", e.length}});
    return j;
  }

  static Manifest from_json(const json& j, const std::string& context) {
    Manifest m;
    try {
      m.model_tag = j.at("model_tag").get<std::string>();
      m.dim = j.at("dim").get<Eigen::Index>();
      for (const auto& e : j.at("entries"))
        m.entries.push_back({e.at("seq_id").get<std::string>(), e.at("path").get<std::string>(),
                             e.at("length").get<Eigen::Index>()});
    } catch (const json::exception& ex) {
      throw InputError(context + ": malformed manifest: " + ex.what());
    }
    if (m.dim < 1) throw InputError(context + ": manifest dim must be positive");
    for (const auto& [key, value] : j.items())
      if (key != "model_tag" && key != "dim" && key != "entries") m.extra[key] = value;
    return m;
  }
};

/// A set directory stands for the manifest.json inside it.
inline fs::path resolve_manifest(const fs::path& path) {
  return fs::is_directory(path) ? path / "manifest.json" : path;
}

inline Manifest read_manifest(const fs::path& given) {
  const fs::path path = resolve_manifest(given);
  if (!fs::exists(path)) throw InputError("manifest not found: " + path.string());
  json j;
  try {
    j = json::parse(detail::read_text(path));
  } catch (const json::parse_error& ex) {
    throw InputError(path.string() + ": invalid JSON: " + ex.what());
  }
  return Manifest::from_json(j, path.string());
}

inline void write_manifest(const Manifest& m, const fs::path& path) {
  detail::write_text(path, m.to_json().dump(2) + "\n");
}

inline EmbeddingSet load_set(const fs::path& given) {
  const fs::path manifest_path = resolve_manifest(given);
  const Manifest m = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  EmbeddingSet set(m.model_tag, m.dim);
  for (const auto& entry : m.entries) {
    if (set.find(entry.seq_id))
      throw InputError(manifest_path.string() + ": duplicate seq_id '" + entry.seq_id + "'");
    fs::path p = entry.path;
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p))
      throw InputError(manifest_path.string() + ": missing file for seq_id '" + entry.seq_id +
                       "': " + p.string());
    EmbeddingMatrix e = read_embedding(p);
    if (e.seq_id != entry.seq_id)
      throw InputError(p.string() + ": file seq_id '" + e.seq_id + "' does not match manifest '" +
                       entry.seq_id + "'");
    if (e.k() != m.dim)
      throw InputError(manifest_path.string() + ": seq_id '" + entry.seq_id + "' has dim " +
                       std::to_string(e.k()) + ", manifest dim is " + std::to_string(m.dim));
    if (e.n() != entry.length)
      throw InputError(manifest_path.string() + ": seq_id '" + entry.seq_id + "' has length " +
                       std::to_string(e.n()) + ", manifest says " + std::to_string(entry.length));
    set.add(std::move(e));
  }
  return set;
}

/// File name for a sequence: ordinal prefix keeps names unique after
/// sanitizing characters that are awkward in paths.
inline std::string embedding_file_name(std::size_t ordinal, const std::string& seq_id) {
  std::string safe;
  for (char c : seq_id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    safe.push_back(ok ? c : '_');
  }
  if (safe.size() > 64) safe.resize(64);
  char prefix[16];
  std::snprintf(prefix, sizeof prefix, "%06zu_", ordinal);
  return prefix + safe + ".emb";
}

/// Writes every entry as EMB1 into `dir` plus `dir/manifest.json`.
inline Manifest save_set(const EmbeddingSet& set, const fs::path& dir, json extra = json::object()) {
  fs::create_directories(dir);
  Manifest m;
  m.model_tag = set.model_tag();
  m.dim = set.k();
  m.extra = std::move(extra);
  std::size_t i = 0;
  for (const auto& e : set) {
    const std::string name = embedding_file_name(i++, e.seq_id);
    write_embedding(e, dir / name);
    m.entries.push_back({e.seq_id, name, e.n()});
  }
  write_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace rdistill
