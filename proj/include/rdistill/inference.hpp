#pragma once

// Applying trained maps to new sequences. Every level's embedding of a
// sequence is required; the result is a Matryoshka embedding whose prefix at
// each level width is the reverse-distilled embedding of that level.

#include <string>
#include <vector>

#include "rdistill/distillation.hpp"
#include "rdistill/embedding_store.hpp"
#include "rdistill/error.hpp"

namespace rdistill {

struct MatryoshkaEmbedding {
  std::string seq_id;
  MatrixXd values;  ///< n x k_top, kept in double until exported
  std::vector<Index> level_dims;
  std::string chain_hash;

  Index n() const { return values.rows(); }
  Index k_top() const { return values.cols(); }
};

/// First k columns as a float32 embedding; k must be a declared level width.
inline EmbeddingMatrix prefix(const MatryoshkaEmbedding& e, Index k) {
  if (std::find(e.level_dims.begin(), e.level_dims.end(), k) == e.level_dims.end()) {
    std::string dims;
    for (auto d : e.level_dims) dims += (dims.empty() ? "" : ",") + std::to_string(d);
    throw InputError("prefix width " + std::to_string(k) + " is not a level width (" + dims + ")");
  }
  return make_embedding(e.seq_id, e.values.leftCols(k));
}

inline EmbeddingMatrix to_embedding(const MatryoshkaEmbedding& e) { return prefix(e, e.k_top()); }

inline MatryoshkaEmbedding infer_chain(const ChainMap& chain, const std::vector<EmbeddingMatrix>& per_level) {
  const auto& h = chain.hierarchy;
  if (per_level.size() != h.size()) {
    std::string msg = "expected " + std::to_string(h.size()) + " levels, got " + std::to_string(per_level.size());
    if (per_level.size() < h.size()) msg += "; missing level '" + h[per_level.size()].tag + "'";
    throw InputError(msg);
  }
  const auto& first = per_level.front();
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& e = per_level[i];
    if (e.k() != h[i].dim)
      throw InputError("level '" + h[i].tag + "': expected dim " + std::to_string(h[i].dim) + ", got " +
                       std::to_string(e.k()));
    if (e.seq_id != first.seq_id)
      throw InputError("level '" + h[i].tag + "': seq_id '" + e.seq_id + "' differs from '" + first.seq_id + "'");
    if (e.n() != first.n())
      throw InputError("level '" + h[i].tag + "': length mismatch for '" + e.seq_id + "' (" +
                       std::to_string(e.n()) + " vs " + std::to_string(first.n()) + ")");
  }
  MatryoshkaEmbedding out;
  out.seq_id = first.seq_id;
  out.level_dims = h.dims();
  out.chain_hash = chain_hash(chain);
  MatrixXd acc = first.values.cast<double>();
  for (std::size_t i = 0; i < chain.stages.size(); ++i)
    acc = decompose(chain.stages[i], acc, per_level[i + 1].values.cast<double>());
  out.values = std::move(acc);
  return out;
}

inline MatryoshkaEmbedding infer_pair(const PairMap& map, const EmbeddingMatrix& h_r, const EmbeddingMatrix& h_p) {
  if (compute_config_hash(map) != map.config_hash) throw InputError("config_hash mismatch: map was modified");
  return infer_chain(as_chain(map), {h_r, h_p});
}

/// Infers every sequence of aligned per-level sets. Set tags must match the
/// chain's hierarchy in order.
inline std::vector<MatryoshkaEmbedding> infer_sets(const ChainMap& chain, const std::vector<EmbeddingSet>& sets) {
  const auto& h = chain.hierarchy;
  if (sets.size() != h.size()) {
    std::string msg = "expected " + std::to_string(h.size()) + " level sets, got " + std::to_string(sets.size());
    if (sets.size() < h.size()) msg += "; missing level '" + h[sets.size()].tag + "'";
    throw InputError(msg);
  }
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (sets[i].model_tag() != h[i].tag)
      throw InputError("level " + std::to_string(i + 1) + ": expected model tag '" + h[i].tag + "', got '" +
                       sets[i].model_tag() + "'");
    if (i) require_aligned(sets[0], sets[i]);
  }
  std::vector<MatryoshkaEmbedding> out;
  out.reserve(sets[0].size());
  for (const auto& e : sets[0]) {
    std::vector<EmbeddingMatrix> levels;
    for (const auto& s : sets) levels.push_back(s.at(e.seq_id));
    out.push_back(infer_chain(chain, levels));
  }
  return out;
}

inline std::string rd_tag(const std::string& large_tag) { return "rd." + large_tag; }

/// Float32 set of prefixes at width k, tagged `model_tag`.
inline EmbeddingSet prefix_set(const std::vector<MatryoshkaEmbedding>& embs, Index k, const std::string& model_tag) {
  EmbeddingSet set(model_tag, k);
  for (const auto& e : embs) set.add(prefix(e, k));
  return set;
}

inline void require_chain_hash(const ChainMap& chain, const std::string& expected) {
  const auto actual = chain_hash(chain);
  if (actual != expected) throw InputError("chain_hash mismatch: expected " + expected + ", artifact has " + actual);
}

}  // namespace rdistill
