#pragma once

// Training of pairwise maps (small -> large embedding space plus the
// orthogonal residual basis) and of chains of such maps over a hierarchy.

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdistill/embedding_store.hpp"
#include "rdistill/error.hpp"
#include "rdistill/hashing.hpp"
#include "rdistill/numerics.hpp"

namespace rdistill {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr int kArtifactFormatVersion = 1;

enum class MappingMode { pcr, ols };

inline std::string to_string(MappingMode m) { return m == MappingMode::pcr ? "pcr" : "ols"; }

inline MappingMode parse_mapping_mode(const std::string& s) {
  if (s == "pcr") return MappingMode::pcr;
  if (s == "ols") return MappingMode::ols;
  throw InputError("mode: expected 'pcr' or 'ols', got '" + s + "'");
}

struct TrainOptions {
  MappingMode mode = MappingMode::pcr;
  std::optional<Index> rank_override;  ///< pcr only; replaces the Johnstone rank
  std::uint64_t seed = 0;              ///< drives basis completion only
};

struct PairMap {
  std::string small_tag;
  std::string large_tag;
  Index k_r = 0;
  Index k_p = 0;
  MappingMode mode = MappingMode::pcr;
  std::optional<Index> rank_override;
  std::uint64_t seed = 0;

  num::AffineMap regressor;  ///< k_r -> k_p
  MatrixXd v_res;            ///< k_p x (k_p - k_r), orthonormal columns
  Index r_j = 0;             ///< principal components kept by the regressor

  // Diagnostics.
  VectorXd residual_singular_values;
  double train_mse = 0.0;
  Index samples = 0;
  double noise_variance = 0.0;  ///< Johnstone estimate (pcr without override)
  double noise_edge = 0.0;
  Index completed_columns = 0;  ///< v_res columns filled by seeded completion
  std::vector<std::string> warnings;

  std::string config_hash;

  Index residual_dim() const { return k_p - k_r; }
};

/// Fingerprint of everything that determines how a map was configured.
inline std::string compute_config_hash(const PairMap& m) {
  std::ostringstream s;
  s << "format=" << kArtifactFormatVersion << ";mode=" << to_string(m.mode) << ";rank=";
  if (m.rank_override)
    s << *m.rank_override;
  else
    s << "auto";
  s << ";r_j=" << m.r_j << ";seed=" << m.seed << ";k_r=" << m.k_r << ";k_p=" << m.k_p << ";small=" << m.small_tag
    << ";large=" << m.large_tag;
  return fnv1a_hex(s.str());
}

namespace detail {

inline void hash_matrix(Fnv1a64& h, const MatrixXd& m) {
  const std::uint64_t shape[2] = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  h.update(std::span(reinterpret_cast<const unsigned char*>(shape), sizeof shape));
  // Column-major element bytes; layout is fixed by Eigen's default storage.
  h.update(std::span(reinterpret_cast<const unsigned char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size())));
}

}  // namespace detail

/// Hash of configuration plus every learned parameter.
inline std::string content_hash(const PairMap& m) {
  Fnv1a64 h;
  h.update(m.config_hash);
  detail::hash_matrix(h, m.regressor.input_mean);
  detail::hash_matrix(h, m.regressor.weights);
  detail::hash_matrix(h, m.regressor.output_mean);
  detail::hash_matrix(h, m.v_res);
  return h.hex();
}

/// [h_r | (h_p - regressor(h_r)) * v_res]; the first k_r columns are copied.
inline MatrixXd decompose(const PairMap& map, const MatrixXd& h_r, const MatrixXd& h_p) {
  if (h_r.cols() != map.k_r)
    throw InputError("dim mismatch: map expects small dim " + std::to_string(map.k_r) + ", got " +
                     std::to_string(h_r.cols()));
  if (h_p.cols() != map.k_p)
    throw InputError("dim mismatch: map expects large dim " + std::to_string(map.k_p) + ", got " +
                     std::to_string(h_p.cols()));
  if (h_r.rows() != h_p.rows())
    throw InputError("length mismatch: " + std::to_string(h_r.rows()) + " vs " + std::to_string(h_p.rows()) + " rows");
  MatrixXd out(h_r.rows(), map.k_p);
  out.leftCols(map.k_r) = h_r;
  out.rightCols(map.residual_dim()) = (h_p - map.regressor.apply(h_r)) * map.v_res;
  return out;
}

inline MatrixXd residual_of(const PairMap& map, const MatrixXd& h_r, const MatrixXd& h_p) {
  return h_p - map.regressor.apply(h_r);
}

/// ||R - R Q Q^T||_F^2 / (rows * cols).
inline double projection_mse(const MatrixXd& r, const MatrixXd& q) {
  return (r - (r * q) * q.transpose()).squaredNorm() / static_cast<double>(r.rows() * r.cols());
}

/// Core of pair training on already-stacked matrices.
inline PairMap fit_pair(const MatrixXd& h_r, const MatrixXd& h_p, const std::string& small_tag,
                        const std::string& large_tag, const TrainOptions& opts) {
  const Index L = h_r.rows(), k_r = h_r.cols(), k_p = h_p.cols();
  if (h_p.rows() != L) throw InputError("train: small and large matrices have different row counts");
  if (k_r >= k_p)
    throw InputError("train: small dim " + std::to_string(k_r) + " must be below large dim " + std::to_string(k_p));
  if (L < 2) throw InputError("train: need at least 2 stacked rows");
  if (!h_r.allFinite() || !h_p.allFinite()) throw InputError("train: non-finite embedding values");
  if (opts.rank_override) {
    if (opts.mode != MappingMode::pcr) throw InputError("rank_override: only valid in pcr mode");
    if (*opts.rank_override < 1 || *opts.rank_override > k_r)
      throw InputError("rank_override: " + std::to_string(*opts.rank_override) + " outside [1, " +
                       std::to_string(k_r) + "]");
  }

  PairMap map;
  map.small_tag = small_tag;
  map.large_tag = large_tag;
  map.k_r = k_r;
  map.k_p = k_p;
  map.mode = opts.mode;
  map.rank_override = opts.rank_override;
  map.seed = opts.seed;
  map.samples = L;
  if (L <= k_p)
    map.warnings.push_back("only " + std::to_string(L) + " training rows for large dim " + std::to_string(k_p) +
                           "; residual basis may need completion");

  const num::PcaModel model = num::pca(h_r);
  if (model.eigenvalues(0) <= 0.0) throw InputError("degenerate inputs: small-model embeddings have zero variance");
  Index numeric_rank = 0;
  while (numeric_rank < k_r && model.eigenvalues(numeric_rank) > 0.0) ++numeric_rank;

  if (opts.mode == MappingMode::ols) {
    // Minimum-norm least squares: all components with nonzero variance.
    map.r_j = numeric_rank;
  } else if (opts.rank_override) {
    map.r_j = *opts.rank_override;
    if (map.r_j > numeric_rank)
      throw InputError("rank_override: " + std::to_string(map.r_j) + " exceeds the numerical rank " +
                       std::to_string(numeric_rank) + " of the small-model embeddings");
  } else {
    const auto th = num::johnstone_threshold(model.eigenvalues, L, k_r);
    map.r_j = th.rank;
    map.noise_variance = th.noise_variance;
    map.noise_edge = th.edge;
  }

  if (map.r_j == 0) {
    map.warnings.push_back("no principal component above the noise edge; regressor is the large-model mean");
    map.regressor.input_mean = model.mean;
    map.regressor.weights = MatrixXd::Zero(k_r, k_p);
    map.regressor.output_mean = num::column_mean(h_p);
  } else {
    map.regressor = num::pcr_fit(h_r, h_p, model, map.r_j);
  }

  const MatrixXd r = h_p - map.regressor.apply(h_r);
  const num::SvdResult dec = num::svd(r, /*compute_u=*/false);
  map.residual_singular_values = dec.s;

  const Index d = k_p - k_r;
  const double tol = static_cast<double>(std::max(L, k_p)) * std::numeric_limits<double>::epsilon() * h_p.norm();
  Index kept = 0;
  while (kept < d && kept < dec.s.size() && dec.s(kept) > tol) ++kept;
  if (kept < d) {
    map.completed_columns = d - kept;
    map.v_res = num::complete_orthonormal(dec.v.leftCols(kept), d, opts.seed);
    map.warnings.push_back("residual rank " + std::to_string(kept) + " below " + std::to_string(d) + "; " +
                           std::to_string(d - kept) + " basis columns completed from seed");
  } else {
    map.v_res = dec.v.leftCols(d);
  }
  map.train_mse = projection_mse(r, map.v_res);
  map.config_hash = compute_config_hash(map);
  return map;
}

inline void require_aligned(const EmbeddingSet& a, const EmbeddingSet& b) {
  const auto rep = validate_aligned(a, b);
  if (!rep.aligned)
    throw InputError("misaligned sets '" + a.model_tag() + "' and '" + b.model_tag() + "': " + rep.summary());
}

inline PairMap train_pair(const EmbeddingSet& set_r, const EmbeddingSet& set_p, const TrainOptions& opts = {}) {
  require_aligned(set_r, set_p);
  if (set_r.k() >= set_p.k())
    throw InputError("train_pair: small dim " + std::to_string(set_r.k()) + " must be below large dim " +
                     std::to_string(set_p.k()));
  return fit_pair(stack(set_r).values, stack(set_p).values, set_r.model_tag(), set_p.model_tag(), opts);
}

// ---------------------------------------------------------------------------
// Chains

struct ChainMap {
  ModelHierarchy hierarchy;
  std::vector<PairMap> stages;  ///< stage i maps accumulated dim k_i -> k_{i+1}

  std::vector<Index> level_dims() const { return hierarchy.dims(); }

  /// The chain over the first `levels` hierarchy levels.
  ChainMap truncated(std::size_t levels) const {
    if (levels < 2 || levels > hierarchy.size())
      throw InputError("truncated chain needs between 2 and " + std::to_string(hierarchy.size()) + " levels");
    return {hierarchy.truncated(levels), {stages.begin(), stages.begin() + static_cast<std::ptrdiff_t>(levels - 1)}};
  }

  void validate() const {
    if (hierarchy.size() < 2) throw InputError("chain: need at least 2 levels");
    if (stages.size() + 1 != hierarchy.size()) throw InputError("chain: stage count does not match hierarchy");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (stages[i].k_r != hierarchy[i].dim || stages[i].k_p != hierarchy[i + 1].dim)
        throw InputError("chain: stage " + std::to_string(i + 1) + " dims do not match the hierarchy");
      if (stages[i].large_tag != hierarchy[i + 1].tag)
        throw InputError("chain: stage " + std::to_string(i + 1) + " targets '" + stages[i].large_tag +
                         "', hierarchy says '" + hierarchy[i + 1].tag + "'");
    }
  }
};

inline std::string chain_hash(const ChainMap& chain) {
  Fnv1a64 h;
  for (const auto& l : chain.hierarchy.levels()) h.update(l.tag + ":" + std::to_string(l.dim) + ";");
  for (const auto& s : chain.stages) h.update(content_hash(s) + ";");
  return h.hex();
}

/// Tag of the representation accumulated up to `level` (0-based).
inline std::string accumulated_tag(const ModelHierarchy& h, std::size_t level) {
  return level == 0 ? h[0].tag : "rd." + h[level].tag;
}

inline ChainMap as_chain(const PairMap& map) {
  return {ModelHierarchy({{map.small_tag, map.k_r}, {map.large_tag, map.k_p}}), {map}};
}

/// Trains stage i on (accumulator so far, level i+1) and extends the
/// accumulator by the projected residual. `accumulators`, if given, receives
/// the stacked accumulator after every level (first entry: level 1 itself).
inline ChainMap train_chain(const std::vector<EmbeddingSet>& sets, const TrainOptions& opts = {},
                            std::vector<MatrixXd>* accumulators = nullptr) {
  if (sets.size() < 2) throw InputError("train_chain: need at least 2 levels, got " + std::to_string(sets.size()));
  std::vector<ModelLevel> levels;
  for (const auto& s : sets) levels.push_back({s.model_tag(), s.k()});
  ChainMap chain{ModelHierarchy(std::move(levels)), {}};
  for (std::size_t i = 1; i < sets.size(); ++i) require_aligned(sets[0], sets[i]);

  MatrixXd acc = stack(sets[0]).values;
  if (accumulators) accumulators->push_back(acc);
  for (std::size_t i = 1; i < sets.size(); ++i) {
    const MatrixXd h_p = stack(sets[i]).values;
    chain.stages.push_back(fit_pair(acc, h_p, accumulated_tag(chain.hierarchy, i - 1), sets[i].model_tag(), opts));
    acc = decompose(chain.stages.back(), acc, h_p);
    if (accumulators) accumulators->push_back(acc);
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Reconstruction diagnostics

struct ReconReport {
  Index rows = 0;
  double mse_before = 0.0;  ///< ||R||^2 / (L k_p)
  double mse_after = 0.0;   ///< after projecting R onto span(v_res)
  std::vector<double> captured_fraction;  ///< ||R v_j||^2 / ||R||^2 per column
};

inline ReconReport reconstruction_report(const PairMap& map, const MatrixXd& h_r, const MatrixXd& h_p) {
  ReconReport rep;
  const MatrixXd r = h_p - map.regressor.apply(h_r);
  if (h_p.cols() != map.k_p || h_r.rows() != h_p.rows()) throw InputError("reconstruction_report: dim mismatch");
  rep.rows = r.rows();
  const double total = r.squaredNorm();
  rep.mse_before = total / static_cast<double>(r.rows() * r.cols());
  rep.mse_after = projection_mse(r, map.v_res);
  const MatrixXd proj = r * map.v_res;
  for (Index j = 0; j < proj.cols(); ++j)
    rep.captured_fraction.push_back(total > 0.0 ? proj.col(j).squaredNorm() / total : 0.0);
  return rep;
}

inline ReconReport reconstruction_report(const PairMap& map, const EmbeddingSet& set_r, const EmbeddingSet& set_p) {
  require_aligned(set_r, set_p);
  if (set_r.k() != map.k_r || set_p.k() != map.k_p)
    throw InputError("reconstruction_report: dim mismatch (map " + std::to_string(map.k_r) + "->" +
                     std::to_string(map.k_p) + ", sets " + std::to_string(set_r.k()) + "->" +
                     std::to_string(set_p.k()) + ")");
  return reconstruction_report(map, stack(set_r).values, stack(set_p).values);
}

}  // namespace rdistill
