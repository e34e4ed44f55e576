#pragma once

// On-disk artifacts: a directory holding meta.json plus one MAT1 file per
// matrix block.
//
//   MAT1 block: "MAT1" | u32 version=1 | u32 rows | u32 cols | u8 dtype=2
//               | rows*cols float64, row-major; little-endian throughout.
//
// meta.json records every block's file, shape and FNV-1a checksum, so a
// damaged block is reported before it is decoded.

#include <filesystem>
#include <string>
#include <variant>

#include <json.hpp>

#include "rdistill/binary_io.hpp"
#include "rdistill/distillation.hpp"
#include "rdistill/embedding_store.hpp"
#include "rdistill/error.hpp"
#include "rdistill/hashing.hpp"

namespace rdistill {

inline constexpr std::uint32_t kMatVersion = 1;

inline std::vector<char> encode_matrix(const MatrixXd& m) {
  detail::ByteWriter w;
  w.bytes("MAT1");
  w.u32(kMatVersion);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  w.u8(kDtypeFloat64);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
  return w.buffer();
}

inline MatrixXd decode_matrix(const std::vector<char>& data, const std::string& context) {
  detail::ByteReader r(data, context);
  if (r.bytes(4) != "MAT1") throw InputError(context + ": bad magic");
  if (r.u32() != kMatVersion) throw InputError(context + ": version mismatch");
  const std::uint32_t rows = r.u32(), cols = r.u32();
  if (r.u8() != kDtypeFloat64) throw InputError(context + ": unsupported dtype code");
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
  if (r.remaining() < count * 8) throw InputError(context + ": truncated payload");
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
  if (r.remaining() != 0) throw InputError(context + ": trailing bytes after payload");
  return m;
}

namespace detail {

inline MatrixXd column(const VectorXd& v) { return v; }

inline json write_block(const fs::path& dir, const std::string& name, const MatrixXd& m) {
  const auto bytes = encode_matrix(m);
  const std::string file = name + ".mat";
  write_file(dir / file, bytes);
  return {{"file", file},
          {"rows", m.rows()},
          {"cols", m.cols()},
          {"fnv1a64", fnv1a_hex(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()))}};
}

inline MatrixXd read_block(const fs::path& dir, const json& blocks, const std::string& name, Index rows, Index cols) {
  if (!blocks.contains(name)) throw InputError(dir.string() + ": meta.json lists no block '" + name + "'");
  const json& b = blocks.at(name);
  const fs::path path = dir / b.at("file").get<std::string>();
  if (!fs::exists(path)) throw InputError("corrupted artifact: missing block file " + path.string());
  const auto bytes = read_file(path);
  const auto sum = fnv1a_hex(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
  if (sum != b.at("fnv1a64").get<std::string>())
    throw InputError("corrupted block '" + name + "' in " + dir.string() + ": checksum mismatch");
  MatrixXd m;
  try {
    m = decode_matrix(bytes, path.string());
  } catch (const InputError& e) {
    throw InputError(std::string("corrupted block '") + name + "': " + e.what());
  }
  if (b.at("rows").get<Index>() != m.rows() || b.at("cols").get<Index>() != m.cols())
    throw InputError("corrupted block '" + name + "': shape differs from meta.json");
  if (m.rows() != rows || m.cols() != cols)
    throw InputError(dir.string() + ": metadata dims disagree with block '" + name + "' shape " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + " (expected " +
                     std::to_string(rows) + "x" + std::to_string(cols) + ")");
  return m;
}

inline json read_meta(const fs::path& dir) {
  const fs::path path = dir / "meta.json";
  if (!fs::exists(path)) throw InputError("artifact not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kArtifactFormatVersion)
    throw InputError(path.string() + ": version mismatch (expected format_version " +
                     std::to_string(kArtifactFormatVersion) + ")");
  return j;
}

inline void write_meta(const fs::path& dir, const json& meta) { write_text(dir / "meta.json", meta.dump(2) + "\n"); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Pair maps

inline json pair_meta(const PairMap& m) {
  json j = {{"kind", "pair"},
            {"format_version", kArtifactFormatVersion},
            {"small_tag", m.small_tag},
            {"large_tag", m.large_tag},
            {"k_r", m.k_r},
            {"k_p", m.k_p},
            {"mode", to_string(m.mode)},
            {"rank_override", m.rank_override ? json(*m.rank_override) : json(nullptr)},
            {"seed", m.seed},
            {"r_j", m.r_j},
            {"samples", m.samples},
            {"train_mse", m.train_mse},
            {"noise_variance", m.noise_variance},
            {"noise_edge", m.noise_edge},
            {"completed_columns", m.completed_columns},
            {"warnings", m.warnings},
            {"config_hash", m.config_hash}};
  j["residual_singular_values"] = std::vector<double>(m.residual_singular_values.data(),
                                                      m.residual_singular_values.data() + m.residual_singular_values.size());
  return j;
}

inline void save_pair(const PairMap& m, const fs::path& dir) {
  fs::create_directories(dir);
  json meta = pair_meta(m);
  meta["blocks"] = {{"input_mean", detail::write_block(dir, "input_mean", detail::column(m.regressor.input_mean))},
                    {"weights", detail::write_block(dir, "weights", m.regressor.weights)},
                    {"output_mean", detail::write_block(dir, "output_mean", detail::column(m.regressor.output_mean))},
                    {"v_res", detail::write_block(dir, "v_res", m.v_res)}};
  detail::write_meta(dir, meta);
}

inline PairMap pair_from_meta(const json& j, const fs::path& dir) {
  PairMap m;
  try {
    if (j.at("kind").get<std::string>() != "pair") throw InputError(dir.string() + ": not a pair artifact");
    m.small_tag = j.at("small_tag").get<std::string>();
    m.large_tag = j.at("large_tag").get<std::string>();
    m.k_r = j.at("k_r").get<Index>();
    m.k_p = j.at("k_p").get<Index>();
    m.mode = parse_mapping_mode(j.at("mode").get<std::string>());
    if (!j.at("rank_override").is_null()) m.rank_override = j.at("rank_override").get<Index>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.r_j = j.at("r_j").get<Index>();
    m.samples = j.at("samples").get<Index>();
    m.train_mse = j.at("train_mse").get<double>();
    m.noise_variance = j.at("noise_variance").get<double>();
    m.noise_edge = j.at("noise_edge").get<double>();
    m.completed_columns = j.at("completed_columns").get<Index>();
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
    m.config_hash = j.at("config_hash").get<std::string>();
    const auto sv = j.at("residual_singular_values").get<std::vector<double>>();
    m.residual_singular_values = Eigen::Map<const VectorXd>(sv.data(), static_cast<Index>(sv.size()));
  } catch (const json::exception& e) {
    throw InputError(dir.string() + "/meta.json: malformed pair metadata: " + e.what());
  }
  if (m.k_r < 1 || m.k_p <= m.k_r) throw InputError(dir.string() + ": metadata dims must satisfy 0 < k_r < k_p");
  if (compute_config_hash(m) != m.config_hash)
    throw InputError(dir.string() + ": config_hash mismatch (format_version " +
                     std::to_string(kArtifactFormatVersion) + ")");
  try {
    const json& blocks = j.at("blocks");
    m.regressor.input_mean = detail::read_block(dir, blocks, "input_mean", m.k_r, 1);
    m.regressor.weights = detail::read_block(dir, blocks, "weights", m.k_r, m.k_p);
    m.regressor.output_mean = detail::read_block(dir, blocks, "output_mean", m.k_p, 1);
    m.v_res = detail::read_block(dir, blocks, "v_res", m.k_p, m.k_p - m.k_r);
  } catch (const json::exception& e) {
    throw InputError(dir.string() + "/meta.json: malformed block table: " + e.what());
  }
  return m;
}

inline PairMap load_pair(const fs::path& dir) { return pair_from_meta(detail::read_meta(dir), dir); }

// ---------------------------------------------------------------------------
// Chains: dir/meta.json plus one pair layout per stage in dir/stage_NN/.

inline std::string stage_dir_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "stage_%02zu", i + 1);
  return buf;
}

inline void save_chain(const ChainMap& chain, const fs::path& dir) {
  chain.validate();
  fs::create_directories(dir);
  json levels = json::array();
  for (const auto& l : chain.hierarchy.levels()) levels.push_back({{"tag", l.tag}, {"dim", l.dim}});
  json stages = json::array();
  for (std::size_t i = 0; i < chain.stages.size(); ++i) {
    save_pair(chain.stages[i], dir / stage_dir_name(i));
    stages.push_back(stage_dir_name(i));
  }
  const auto& first = chain.stages.front();
  json meta = {{"kind", "chain"},
               {"format_version", kArtifactFormatVersion},
               {"levels", levels},
               {"mode", to_string(first.mode)},
               {"seed", first.seed},
               {"stages", stages},
               {"chain_hash", chain_hash(chain)}};
  detail::write_meta(dir, meta);
}

inline ChainMap load_chain(const fs::path& dir) {
  const json meta = detail::read_meta(dir);
  const std::string kind = meta.value("kind", "");
  if (kind == "pair") return as_chain(pair_from_meta(meta, dir));
  if (kind != "chain") throw InputError(dir.string() + ": not a pair or chain artifact (kind '" + kind + "')");
  ChainMap chain;
  std::string stored;
  std::vector<std::string> stage_dirs;
  try {
    std::vector<ModelLevel> levels;
    for (const auto& l : meta.at("levels")) levels.push_back({l.at("tag").get<std::string>(), l.at("dim").get<Index>()});
    chain.hierarchy = ModelHierarchy(std::move(levels));
    stage_dirs = meta.at("stages").get<std::vector<std::string>>();
    stored = meta.at("chain_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw InputError(dir.string() + "/meta.json: malformed chain metadata: " + e.what());
  }
  for (const auto& s : stage_dirs) chain.stages.push_back(load_pair(dir / s));
  chain.validate();
  if (chain_hash(chain) != stored) throw InputError(dir.string() + ": chain_hash mismatch");
  return chain;
}

inline std::string artifact_kind(const fs::path& dir) { return detail::read_meta(dir).value("kind", ""); }

}  // namespace rdistill
