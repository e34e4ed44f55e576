#pragma once

// Comparison points for reverse distillation: PCA on the concatenation of
// every level's embeddings (not Matryoshka; every coordinate depends on the
// whole level set), and the PCR-versus-OLS mapping ablation.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdistill/artifact.hpp"
#include "rdistill/distillation.hpp"
#include "rdistill/dms.hpp"
#include "rdistill/embedding_store.hpp"
#include "rdistill/error.hpp"
#include "rdistill/evaluation.hpp"
#include "rdistill/inference.hpp"
#include "rdistill/numerics.hpp"

namespace rdistill {

/// Deliberately has no level_dims: prefixes of its output carry no meaning.
struct PcaConcatMap {
  std::vector<std::string> level_tags;
  std::vector<Index> input_dims;
  VectorXd mean;               ///< sum(k_i)
  MatrixXd projection;         ///< sum(k_i) x k_target, orthonormal columns
  VectorXd explained_variance; ///< k_target eigenvalues of the concatenated covariance
  Index k_target = 0;

  Index total_dim() const { return mean.size(); }
};

/// Horizontal concatenation of the stacked sets, in level order.
inline MatrixXd concatenate_sets(const std::vector<EmbeddingSet>& sets) {
  if (sets.empty()) throw InputError("concatenate: no sets");
  Index total = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (i) require_aligned(sets[0], sets[i]);
    total += sets[i].k();
  }
  const Index rows = stack(sets[0]).total_rows();
  MatrixXd out(rows, total);
  Index col = 0;
  for (const auto& s : sets) {
    out.middleCols(col, s.k()) = stack(s).values;
    col += s.k();
  }
  return out;
}

inline PcaConcatMap train_pca_concat(const std::vector<EmbeddingSet>& sets, Index k_target) {
  const MatrixXd concat = concatenate_sets(sets);
  if (k_target < 1 || k_target > concat.cols())
    throw InputError("pca_concat: k_target " + std::to_string(k_target) + " out of range [1, " +
                     std::to_string(concat.cols()) + "]");
  const auto model = num::pca(concat);
  PcaConcatMap map;
  for (const auto& s : sets) {
    map.level_tags.push_back(s.model_tag());
    map.input_dims.push_back(s.k());
  }
  map.mean = model.mean;
  map.projection = model.components.leftCols(k_target);
  map.explained_variance = model.eigenvalues.head(k_target);
  map.k_target = k_target;
  return map;
}

inline EmbeddingMatrix infer_pca_concat(const PcaConcatMap& map, const std::vector<EmbeddingMatrix>& per_level) {
  if (per_level.size() != map.input_dims.size())
    throw InputError("pca_concat: expected " + std::to_string(map.input_dims.size()) + " levels, got " +
                     std::to_string(per_level.size()));
  const auto& first = per_level.front();
  MatrixXd concat(first.n(), map.total_dim());
  Index col = 0;
  for (std::size_t i = 0; i < per_level.size(); ++i) {
    const auto& e = per_level[i];
    if (e.k() != map.input_dims[i])
      throw InputError("pca_concat: level '" + map.level_tags[i] + "' expected dim " +
                       std::to_string(map.input_dims[i]) + ", got " + std::to_string(e.k()));
    if (e.n() != first.n() || e.seq_id != first.seq_id)
      throw InputError("pca_concat: level '" + map.level_tags[i] + "' does not match '" + first.seq_id + "'");
    concat.middleCols(col, e.k()) = e.values.cast<double>();
    col += e.k();
  }
  return make_embedding(first.seq_id, num::center_columns(concat, map.mean) * map.projection);
}

inline EmbeddingSet infer_pca_concat_sets(const PcaConcatMap& map, const std::vector<EmbeddingSet>& sets,
                                          const std::string& model_tag) {
  if (sets.size() != map.input_dims.size())
    throw InputError("pca_concat: expected " + std::to_string(map.input_dims.size()) + " level sets, got " +
                     std::to_string(sets.size()));
  for (std::size_t i = 1; i < sets.size(); ++i) require_aligned(sets[0], sets[i]);
  EmbeddingSet out(model_tag, map.k_target);
  for (const auto& e : sets[0]) {
    std::vector<EmbeddingMatrix> levels;
    for (const auto& s : sets) levels.push_back(s.at(e.seq_id));
    out.add(infer_pca_concat(map, levels));
  }
  return out;
}

/// Maps baseline coordinates back into the concatenated space.
inline MatrixXd reconstruct(const PcaConcatMap& map, const MatrixXd& z) {
  if (z.cols() != map.k_target) throw InputError("pca_concat: reconstruct expects width " + std::to_string(map.k_target));
  MatrixXd out = z * map.projection.transpose();
  out.rowwise() += map.mean.transpose();
  return out;
}

/// Mean squared error per entry of the best affine reconstruction of
/// `target` from `features` (least squares with intercept).
inline double affine_reconstruction_mse(const MatrixXd& features, const MatrixXd& target) {
  if (features.rows() != target.rows()) throw InputError("affine_reconstruction_mse: row mismatch");
  const auto fit = num::ols_fit(features, target);
  return (target - fit.apply(features)).squaredNorm() / static_cast<double>(target.size());
}

inline void save_pca_concat(const PcaConcatMap& map, const fs::path& dir) {
  fs::create_directories(dir);
  json meta = {{"kind", "pca_concat"},
               {"format_version", kArtifactFormatVersion},
               {"level_tags", map.level_tags},
               {"input_dims", map.input_dims},
               {"k_target", map.k_target}};
  meta["blocks"] = {{"mean", detail::write_block(dir, "mean", detail::column(map.mean))},
                    {"projection", detail::write_block(dir, "projection", map.projection)},
                    {"explained_variance", detail::write_block(dir, "explained_variance", detail::column(map.explained_variance))}};
  detail::write_meta(dir, meta);
}

inline PcaConcatMap load_pca_concat(const fs::path& dir) {
  const json meta = detail::read_meta(dir);
  PcaConcatMap map;
  try {
    if (meta.at("kind").get<std::string>() != "pca_concat") throw InputError(dir.string() + ": not a pca_concat artifact");
    map.level_tags = meta.at("level_tags").get<std::vector<std::string>>();
    map.input_dims = meta.at("input_dims").get<std::vector<Index>>();
    map.k_target = meta.at("k_target").get<Index>();
    if (map.level_tags.size() != map.input_dims.size() || map.level_tags.empty())
      throw InputError(dir.string() + ": level_tags and input_dims disagree");
    Index total = 0;
    for (auto d : map.input_dims) total += d;
    if (map.k_target < 1 || map.k_target > total) throw InputError(dir.string() + ": k_target out of range");
    const json& blocks = meta.at("blocks");
    map.mean = detail::read_block(dir, blocks, "mean", total, 1);
    map.projection = detail::read_block(dir, blocks, "projection", total, map.k_target);
    map.explained_variance = detail::read_block(dir, blocks, "explained_variance", map.k_target, 1);
  } catch (const json::exception& e) {
    throw InputError(dir.string() + "/meta.json: malformed pca_concat metadata: " + e.what());
  }
  return map;
}

// ---------------------------------------------------------------------------
// PCR versus OLS

/// One DMS dataset with the two levels' embeddings of its sequences.
struct PairDataset {
  DmsDataset dataset;
  EmbeddingSet set_r;
  EmbeddingSet set_p;
};

struct AblationRow {
  std::string dataset;
  std::optional<double> rho_pcr;
  std::optional<double> rho_ols;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<EvalReport> reports;  ///< PCR and OLS report per dataset
  std::size_t compared = 0;         ///< datasets where both are defined
  std::size_t pcr_wins = 0;         ///< of those, rho_pcr >= rho_ols

  double pcr_win_rate() const { return compared ? 100.0 * static_cast<double>(pcr_wins) / static_cast<double>(compared) : 0.0; }

  json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json rj = json::array();
    for (const auto& r : rows) rj.push_back({{"dataset", r.dataset}, {"rho_pcr", opt(r.rho_pcr)}, {"rho_ols", opt(r.rho_ols)}});
    return {{"rows", rj}, {"compared", compared}, {"pcr_wins", pcr_wins}, {"pcr_win_rate", pcr_win_rate()}};
  }

  std::string render() const {
    std::vector<std::vector<std::string>> grid{{"dataset", "PCR", "OLS"}};
    auto cell = [](const std::optional<double>& v) { return v ? detail::format("%.4f", *v) : std::string("n/a"); };
    for (const auto& r : rows) grid.push_back({r.dataset, cell(r.rho_pcr), cell(r.rho_ols)});
    return "1-mutation test Spearman by mapping mode\n" + detail::render_grid(grid) + "PCR >= OLS on " +
           std::to_string(pcr_wins) + "/" + std::to_string(compared) + " datasets (" + format_win_rate(pcr_win_rate()) +
           ")\n";
  }
};

/// Trains the pair map in both modes on the training sets, then evaluates
/// each dataset's top-width rd embedding under each. A tie counts for PCR.
inline AblationReport ablate_pcr_vs_ols(const EmbeddingSet& train_r, const EmbeddingSet& train_p,
                                        const std::vector<PairDataset>& datasets, const TrainOptions& base = {},
                                        const EvalOptions& eval = {}, std::size_t jobs = 1) {
  TrainOptions pcr_opts = base, ols_opts = base;
  pcr_opts.mode = MappingMode::pcr;
  ols_opts.mode = MappingMode::ols;
  ols_opts.rank_override.reset();
  const ChainMap pcr = as_chain(train_pair(train_r, train_p, pcr_opts));
  const ChainMap ols = as_chain(train_pair(train_r, train_p, ols_opts));

  AblationReport rep;
  rep.rows.resize(datasets.size());
  std::vector<EvalReport> pcr_reports(datasets.size()), ols_reports(datasets.size());
  parallel_for(datasets.size(), jobs, [&](std::size_t i) {
    const auto& d = datasets[i];
    const auto top = d.set_p.k();
    const auto pcr_set = prefix_set(infer_sets(pcr, {d.set_r, d.set_p}), top, rd_tag(d.set_p.model_tag()) + ".pcr");
    const auto ols_set = prefix_set(infer_sets(ols, {d.set_r, d.set_p}), top, rd_tag(d.set_p.model_tag()) + ".ols");
    pcr_reports[i] = eval_dms(d.dataset, pcr_set, eval);
    ols_reports[i] = eval_dms(d.dataset, ols_set, eval);
    rep.rows[i] = {d.dataset.name, pcr_reports[i].bucket(1)->spearman, ols_reports[i].bucket(1)->spearman};
  });
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    rep.reports.push_back(pcr_reports[i]);
    rep.reports.push_back(ols_reports[i]);
    const auto& r = rep.rows[i];
    if (!r.rho_pcr || !r.rho_ols) continue;
    ++rep.compared;
    rep.pcr_wins += *r.rho_pcr >= *r.rho_ols;
  }
  return rep;
}

}  // namespace rdistill
