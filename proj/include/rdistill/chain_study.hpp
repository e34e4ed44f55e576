#pragma once

// Chain-configuration comparison: trains direct pairs, longer chains and raw
// single levels over one hierarchy, evaluates each on the same DMS datasets,
// and lays out a configs x datasets grid of 1-mutation test Spearman.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdistill/distillation.hpp"
#include "rdistill/evaluation.hpp"
#include "rdistill/inference.hpp"

namespace rdistill {

/// Strictly increasing 0-based level indices. One index means the raw level.
struct ChainConfig {
  std::vector<std::size_t> levels;
};

/// "1,3" or "1>2>3" (1-based) into a config.
inline ChainConfig parse_chain_config(const std::string& text) {
  ChainConfig c;
  std::string tok;
  std::stringstream in(text);
  const char sep = text.find('>') != std::string::npos ? '>' : ',';
  while (std::getline(in, tok, sep)) {
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
      c.levels.push_back(static_cast<std::size_t>(v - 1));
    } catch (const std::exception&) {
      throw InputError("invalid config '" + text + "': expected 1-based level numbers like 1>2>3");
    }
  }
  if (c.levels.empty()) throw InputError("invalid config '" + text + "': empty");
  return c;
}

inline void validate_config(const ChainConfig& c, std::size_t n_levels) {
  if (c.levels.empty()) throw InputError("invalid config: no levels");
  for (std::size_t i = 0; i < c.levels.size(); ++i) {
    if (c.levels[i] >= n_levels)
      throw InputError("invalid config: level " + std::to_string(c.levels[i] + 1) + " outside hierarchy of " +
                       std::to_string(n_levels));
    if (i && c.levels[i] <= c.levels[i - 1]) throw InputError("invalid config: levels must be strictly increasing");
  }
}

/// "rd: m1→m2→m3" for chains and direct pairs, the raw tag otherwise.
inline std::string config_label(const ChainConfig& c, const std::vector<std::string>& tags) {
  if (c.levels.size() == 1) return tags.at(c.levels[0]);
  std::string s = "rd: ";
  for (std::size_t i = 0; i < c.levels.size(); ++i) s += (i ? "→" : "") + tags.at(c.levels[i]);
  return s;
}

/// One DMS dataset embedded at every level of the hierarchy.
struct StudyDataset {
  DmsDataset dataset;
  std::vector<EmbeddingSet> levels;
};

struct StudyTable {
  std::vector<std::string> configs;
  std::vector<std::string> datasets;
  std::vector<std::vector<std::optional<double>>> rho;  ///< [config][dataset], 1-mutation bucket
  std::vector<EvalReport> reports;

  json to_json() const {
    json rows = json::array();
    for (std::size_t c = 0; c < configs.size(); ++c) {
      json cells = json::array();
      for (const auto& v : rho[c]) cells.push_back(v ? json(*v) : json(nullptr));
      rows.push_back({{"config", configs[c]}, {"rho", cells}});
    }
    return {{"datasets", datasets}, {"rows", rows}};
  }

  std::string render() const {
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> header{"config"};
    for (const auto& d : datasets) header.push_back(d);
    grid.push_back(header);
    for (std::size_t c = 0; c < configs.size(); ++c) {
      std::vector<std::string> row{configs[c]};
      for (const auto& v : rho[c]) row.push_back(v ? detail::format("%.3f", *v) : "n/a");
      grid.push_back(row);
    }
    return "1-mutation test Spearman by configuration\n" + detail::render_grid(grid);
  }
};

namespace detail {

template <typename T>
std::vector<T> pick(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace detail

inline StudyTable chain_config_study(const std::vector<EmbeddingSet>& train_sets, const std::vector<StudyDataset>& datasets,
                                     const std::vector<ChainConfig>& configs, const TrainOptions& train = {},
                                     const EvalOptions& eval = {}, std::size_t jobs = 1) {
  if (configs.empty()) throw InputError("invalid config: none given");
  std::vector<std::string> tags;
  for (const auto& s : train_sets) tags.push_back(s.model_tag());
  for (const auto& c : configs) validate_config(c, train_sets.size());
  for (const auto& d : datasets)
    if (d.levels.size() != train_sets.size())
      throw InputError("dataset '" + d.dataset.name + "' has " + std::to_string(d.levels.size()) + " levels, expected " +
                       std::to_string(train_sets.size()));

  std::vector<std::optional<ChainMap>> chains(configs.size());
  for (std::size_t c = 0; c < configs.size(); ++c)
    if (configs[c].levels.size() > 1) chains[c] = train_chain(detail::pick(train_sets, configs[c].levels), train);

  StudyTable t;
  for (const auto& c : configs) t.configs.push_back(config_label(c, tags));
  for (const auto& d : datasets) t.datasets.push_back(d.dataset.name);
  const std::size_t cells = configs.size() * datasets.size();
  std::vector<EvalReport> reports(cells);
  parallel_for(cells, jobs, [&](std::size_t k) {
    const std::size_t c = k / datasets.size(), d = k % datasets.size();
    const auto& cfg = configs[c];
    const auto& ds = datasets[d];
    if (!chains[c]) {
      EmbeddingSet raw(t.configs[c], ds.levels[cfg.levels[0]].k());
      for (const auto& e : ds.levels[cfg.levels[0]]) raw.add(e);
      reports[k] = eval_dms(ds.dataset, raw, eval);
    } else {
      const auto embs = infer_sets(*chains[c], detail::pick(ds.levels, cfg.levels));
      reports[k] = eval_dms(ds.dataset, prefix_set(embs, embs.front().k_top(), t.configs[c]), eval);
    }
  });
  t.rho.assign(configs.size(), std::vector<std::optional<double>>(datasets.size()));
  for (std::size_t k = 0; k < cells; ++k) {
    t.rho[k / datasets.size()][k % datasets.size()] = reports[k].bucket(1)->spearman;
    t.reports.push_back(std::move(reports[k]));
  }
  return t;
}

}  // namespace rdistill
