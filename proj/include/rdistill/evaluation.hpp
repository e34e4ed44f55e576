#pragma once

// Linear-probe evaluation on DMS datasets: mean mutant-minus-wild-type
// difference vectors, ridge with closed-form LOOCV on 80% of the single
// mutants, Spearman correlation per mutation-count bucket on everything
// held out; plus win-rate and mean/std comparison tables across models.

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <sstream>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rdistill/binary_io.hpp"
#include "rdistill/dms.hpp"
#include "rdistill/embedding_store.hpp"
#include "rdistill/error.hpp"
#include "rdistill/numerics.hpp"
#include "rdistill/random.hpp"

namespace rdistill {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr std::size_t kMinSingleMutants = 100;

/// Mean over `positions` of mut.row(p) - wt.row(p).
inline VectorXd variant_feature(const EmbeddingMatrix& wt, const EmbeddingMatrix& mut, const std::vector<long>& positions) {
  if (wt.k() != mut.k())
    throw InputError("variant_feature: dim mismatch between '" + wt.seq_id + "' and '" + mut.seq_id + "'");
  if (wt.n() != mut.n())
    throw InputError("variant_feature: length mismatch between '" + wt.seq_id + "' (" + std::to_string(wt.n()) +
                     ") and '" + mut.seq_id + "' (" + std::to_string(mut.n()) + ")");
  if (positions.empty()) throw InputError("variant_feature: no positions");
  VectorXd sum = VectorXd::Zero(wt.k());
  for (long p : positions) {
    if (p < 0 || p >= wt.n())
      throw InputError("variant_feature: position " + std::to_string(p + 1) + " out of range for '" + mut.seq_id +
                       "' (length " + std::to_string(wt.n()) + ")");
    sum += (mut.values.row(p).cast<double>() - wt.values.row(p).cast<double>()).transpose();
  }
  return sum / static_cast<double>(positions.size());
}

struct EvalOptions {
  std::vector<double> alpha_grid = num::default_alpha_grid();
  std::uint64_t split_seed = 0;
};

struct BucketResult {
  std::size_t mutations = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::optional<double> spearman;  ///< empty when undefined
  std::string note;
};

struct EvalReport {
  std::string dataset;
  std::string model_tag;
  std::uint64_t split_seed = 0;
  double alpha = 0.0;
  std::vector<BucketResult> buckets;  ///< ascending mutation count
  std::vector<std::string> train_ids;

  const BucketResult* bucket(std::size_t mutations) const {
    for (const auto& b : buckets)
      if (b.mutations == mutations) return &b;
    return nullptr;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"dataset", dataset}, {"model_tag", model_tag}, {"split_seed", split_seed}, {"alpha", alpha}};
    j["buckets"] = nlohmann::json::array();
    for (const auto& b : buckets)
      j["buckets"].push_back({{"mutations", b.mutations},
                              {"n_train", b.n_train},
                              {"n_test", b.n_test},
                              {"spearman", b.spearman ? nlohmann::json(*b.spearman) : nlohmann::json(nullptr)},
                              {"note", b.note}});
    j["train_ids"] = train_ids;
    return j;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
      r.dataset = j.at("dataset").get<std::string>();
      r.model_tag = j.at("model_tag").get<std::string>();
      r.split_seed = j.at("split_seed").get<std::uint64_t>();
      r.alpha = j.at("alpha").get<double>();
      for (const auto& b : j.at("buckets")) {
        BucketResult br;
        br.mutations = b.at("mutations").get<std::size_t>();
        br.n_train = b.at("n_train").get<std::size_t>();
        br.n_test = b.at("n_test").get<std::size_t>();
        if (!b.at("spearman").is_null()) br.spearman = b.at("spearman").get<double>();
        br.note = b.value("note", "");
        r.buckets.push_back(br);
      }
      r.train_ids = j.value("train_ids", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("malformed eval report: ") + e.what());
    }
    return r;
  }
};

inline EvalReport read_report(const std::filesystem::path& path) {
  try {
    return EvalReport::from_json(nlohmann::json::parse(detail::read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline void write_report(const EvalReport& r, const std::filesystem::path& path) {
  detail::write_text(path, r.to_json().dump(2) + "\n");
}

inline EvalReport eval_dms(const DmsDataset& ds, const EmbeddingSet& embeddings, const EvalOptions& opts = {}) {
  const std::size_t singles = ds.count_with(1);
  if (singles < kMinSingleMutants)
    throw InputError("dataset '" + ds.name + "' has " + std::to_string(singles) +
                     " single-mutation variants; at least " + std::to_string(kMinSingleMutants) + " are required");
  const EmbeddingMatrix* wt = embeddings.find(ds.wt_seq_id);
  if (!wt) throw InputError("missing embeddings for wild type '" + ds.wt_seq_id + "' in '" + embeddings.model_tag() + "'");
  std::vector<std::string> missing;
  for (const auto& v : ds.variants)
    if (!embeddings.find(v.mut_seq_id)) missing.push_back(v.mut_seq_id);
  if (!missing.empty()) {
    std::string msg = "missing embeddings for " + std::to_string(missing.size()) + " variants of '" + ds.name + "' in '" +
                      embeddings.model_tag() + "':";
    for (std::size_t i = 0; i < missing.size() && i < 5; ++i) msg += " " + missing[i];
    throw InputError(msg);
  }

  const auto nv = static_cast<Index>(ds.variants.size());
  MatrixXd features(nv, embeddings.k());
  VectorXd scores(nv);
  for (Index i = 0; i < nv; ++i) {
    const auto& v = ds.variants[static_cast<std::size_t>(i)];
    features.row(i) = variant_feature(*wt, embeddings.at(v.mut_seq_id), v.positions()).transpose();
    scores(i) = v.score;
  }

  std::vector<Index> single_idx;
  for (Index i = 0; i < nv; ++i)
    if (ds.variants[static_cast<std::size_t>(i)].mutation_count() == 1) single_idx.push_back(i);
  Rng rng(opts.split_seed);
  rng.shuffle(single_idx);
  const std::size_t n_train = single_idx.size() * 4 / 5;
  std::vector<bool> is_train(static_cast<std::size_t>(nv), false);
  MatrixXd x_train(static_cast<Index>(n_train), features.cols());
  VectorXd y_train(static_cast<Index>(n_train));
  EvalReport rep;
  for (std::size_t t = 0; t < n_train; ++t) {
    const Index i = single_idx[t];
    is_train[static_cast<std::size_t>(i)] = true;
    x_train.row(static_cast<Index>(t)) = features.row(i);
    y_train(static_cast<Index>(t)) = scores(i);
    rep.train_ids.push_back(ds.variants[static_cast<std::size_t>(i)].mut_seq_id);
  }
  const num::RidgeFit fit = num::ridge_loocv(x_train, y_train, opts.alpha_grid);
  const VectorXd pred = fit.predict(features);

  rep.dataset = ds.name;
  rep.model_tag = embeddings.model_tag();
  rep.split_seed = opts.split_seed;
  rep.alpha = fit.alpha;
  std::set<std::size_t> counts;
  for (const auto& v : ds.variants) counts.insert(v.mutation_count());
  for (std::size_t m : counts) {
    BucketResult b;
    b.mutations = m;
    b.n_train = m == 1 ? n_train : 0;
    std::vector<Index> test;
    for (Index i = 0; i < nv; ++i)
      if (!is_train[static_cast<std::size_t>(i)] && ds.variants[static_cast<std::size_t>(i)].mutation_count() == m)
        test.push_back(i);
    b.n_test = test.size();
    if (test.size() < 2) {
      b.note = "fewer than 2 test points";
    } else {
      VectorXd p(static_cast<Index>(test.size())), t(static_cast<Index>(test.size()));
      for (std::size_t q = 0; q < test.size(); ++q) {
        p(static_cast<Index>(q)) = pred(test[q]);
        t(static_cast<Index>(q)) = scores(test[q]);
      }
      try {
        b.spearman = num::spearman(p, t);
      } catch (const InputError& e) {
        b.note = e.what();
      }
    }
    rep.buckets.push_back(std::move(b));
  }
  return rep;
}

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Results must be
/// written to per-index slots so output order never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < count;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Comparison tables

struct ComparisonTable {
  std::vector<std::string> models;
  std::vector<std::string> datasets;
  std::vector<std::size_t> buckets;
  /// win_rate[b][i][j]: percent of datasets with rho_i > rho_j among those
  /// where both are defined; empty if there are none.
  std::vector<std::vector<std::vector<std::optional<double>>>> win_rate;
  std::vector<std::vector<std::size_t>> compared;  ///< [b][i*M+j] dataset count behind win_rate
  std::vector<std::vector<std::optional<double>>> mean;  ///< [b][i]
  std::vector<std::vector<std::optional<double>>> stddev;
  std::vector<std::vector<std::size_t>> defined;  ///< [b][i] datasets with a defined rho

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j = {{"models", models}, {"datasets", datasets}, {"buckets", nlohmann::json::array()}};
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      nlohmann::json jb = {{"mutations", buckets[b]}, {"win_rate", nlohmann::json::array()}, {"summary", nlohmann::json::array()}};
      for (std::size_t i = 0; i < models.size(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t k = 0; k < models.size(); ++k) row.push_back(opt(win_rate[b][i][k]));
        jb["win_rate"].push_back(row);
        jb["summary"].push_back(
            {{"model", models[i]}, {"mean", opt(mean[b][i])}, {"std", opt(stddev[b][i])}, {"datasets", defined[b][i]}});
      }
      j["buckets"].push_back(jb);
    }
    return j;
  }
};

inline ComparisonTable compare_models(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw InputError("compare: no reports");
  ComparisonTable t;
  std::map<std::pair<std::string, std::string>, const EvalReport*> cell;
  std::set<std::size_t> buckets;
  for (const auto& r : reports) {
    if (r.split_seed != reports.front().split_seed)
      throw InputError("compare: mixed split seeds (" + std::to_string(reports.front().split_seed) + " and " +
                       std::to_string(r.split_seed) + ")");
    if (std::find(t.models.begin(), t.models.end(), r.model_tag) == t.models.end()) t.models.push_back(r.model_tag);
    if (std::find(t.datasets.begin(), t.datasets.end(), r.dataset) == t.datasets.end()) t.datasets.push_back(r.dataset);
    if (!cell.emplace(std::make_pair(r.model_tag, r.dataset), &r).second)
      throw InputError("compare: duplicate report for model '" + r.model_tag + "' on dataset '" + r.dataset + "'");
    for (const auto& b : r.buckets) buckets.insert(b.mutations);
  }
  for (const auto& m : t.models)
    for (const auto& d : t.datasets)
      if (!cell.count({m, d})) throw InputError("compare: missing report for model '" + m + "' on dataset '" + d + "'");
  t.buckets.assign(buckets.begin(), buckets.end());

  const std::size_t M = t.models.size();
  auto rho = [&](std::size_t model, const std::string& ds, std::size_t mutations) -> std::optional<double> {
    const auto* b = cell.at({t.models[model], ds})->bucket(mutations);
    return b ? b->spearman : std::nullopt;
  };
  for (std::size_t mutations : t.buckets) {
    std::vector<std::vector<std::optional<double>>> wins(M, std::vector<std::optional<double>>(M));
    std::vector<std::size_t> compared(M * M, 0);
    std::vector<std::optional<double>> mean(M), sd(M);
    std::vector<std::size_t> defined(M, 0);
    for (std::size_t i = 0; i < M; ++i) {
      std::vector<double> vals;
      for (const auto& ds : t.datasets)
        if (auto r = rho(i, ds, mutations)) vals.push_back(*r);
      defined[i] = vals.size();
      if (!vals.empty()) {
        double mu = 0;
        for (double v : vals) mu += v;
        mu /= static_cast<double>(vals.size());
        double var = 0;
        for (double v : vals) var += (v - mu) * (v - mu);
        mean[i] = mu;
        sd[i] = std::sqrt(var / static_cast<double>(vals.size()));
      }
      for (std::size_t k = 0; k < M; ++k) {
        if (k == i) continue;
        std::size_t n = 0, won = 0;
        for (const auto& ds : t.datasets) {
          auto a = rho(i, ds, mutations), b = rho(k, ds, mutations);
          if (!a || !b) continue;
          ++n;
          won += *a > *b;
        }
        compared[i * M + k] = n;
        if (n) wins[i][k] = 100.0 * static_cast<double>(won) / static_cast<double>(n);
      }
    }
    t.win_rate.push_back(std::move(wins));
    t.compared.push_back(std::move(compared));
    t.mean.push_back(std::move(mean));
    t.stddev.push_back(std::move(sd));
    t.defined.push_back(std::move(defined));
  }
  return t;
}

namespace detail {

inline std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::string bucket_label(std::size_t m) { return std::to_string(m) + (m == 1 ? " mutation" : " mutations"); }

/// Code points, not bytes, so cells holding "±" or "→" line up.
inline std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

inline std::string pad(const std::string& s, std::size_t width, bool right) {
  const std::size_t w = display_width(s);
  if (w >= width) return s;
  return right ? std::string(width - w, ' ') + s : s + std::string(width - w, ' ');
}

inline std::string render_grid(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], display_width(r[c]));
    }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) line += (c ? "  " : "") + pad(r[c], width[c], c > 0);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

}  // namespace detail

inline std::string format_win_rate(double pct) { return detail::format("%.2f%%", pct); }

inline std::string format_mean_std(double mean, double sd) {
  return detail::format("%.3f", mean) + " (± " + detail::format("%.3f", sd) + ")";
}

/// One block per bucket: rows are model A, columns model B, cells the share
/// of datasets where A outperforms B.
inline std::string render_win_table(const ComparisonTable& t) {
  std::string out;
  for (std::size_t b = 0; b < t.buckets.size(); ++b) {
    std::size_t n = 0;
    for (auto c : t.compared[b]) n = std::max(n, c);
    out += "% of datasets where row model outperforms column model, " + detail::bucket_label(t.buckets[b]) + " (" +
           std::to_string(n) + " datasets)\n";
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{""};
    for (const auto& m : t.models) header.push_back(m);
    rows.push_back(header);
    for (std::size_t i = 0; i < t.models.size(); ++i) {
      std::vector<std::string> row{t.models[i]};
      for (std::size_t k = 0; k < t.models.size(); ++k) {
        const auto& w = t.win_rate[b][i][k];
        row.push_back(i == k ? "-" : w ? format_win_rate(*w) : "n/a");
      }
      rows.push_back(row);
    }
    out += detail::render_grid(rows) + "\n";
  }
  return out;
}

/// Rows are models, columns buckets, cells "mean (± std)" of test Spearman.
inline std::string render_mean_table(const ComparisonTable& t) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"model"};
  for (auto m : t.buckets) header.push_back(detail::bucket_label(m));
  rows.push_back(header);
  for (std::size_t i = 0; i < t.models.size(); ++i) {
    std::vector<std::string> row{t.models[i]};
    for (std::size_t b = 0; b < t.buckets.size(); ++b)
      row.push_back(t.mean[b][i] ? format_mean_std(*t.mean[b][i], *t.stddev[b][i]) : "n/a");
    rows.push_back(row);
  }
  return "Test Spearman correlation (mean ± std)\n" + detail::render_grid(rows);
}

// ---------------------------------------------------------------------------
// Generic property probe: per-sequence or per-residue labels.

struct LabelRow {
  std::string seq_id;
  std::optional<long> position;  ///< 0-based; empty for a per-sequence label
  double label = 0.0;
};

/// CSV with columns seq_id, position (1-based, empty for per-sequence), label.
inline std::vector<LabelRow> read_label_csv(const std::filesystem::path& path) {
  std::stringstream in(detail::read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty CSV");
  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& c) {
    auto it = std::find(header.begin(), header.end(), c);
    if (it == header.end()) throw InputError(path.string() + ": missing column '" + c + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_id = column("seq_id"), c_pos = column("position"), c_label = column("label");
  std::vector<LabelRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": wrong field count");
    LabelRow r;
    r.seq_id = cells[c_id];
    try {
      if (!cells[c_pos].empty()) {
        const long p = std::stol(cells[c_pos]);
        if (p < 1) throw std::out_of_range("position");
        r.position = p - 1;
      }
      r.label = std::stod(cells[c_label]);
    } catch (const std::exception&) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad position or label");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw InputError(path.string() + ": no label rows");
  return rows;
}

struct ProbeReport {
  std::string model_tag;
  std::string granularity;  ///< "sequence" or "residue"
  std::uint64_t split_seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double alpha = 0.0;
  std::optional<double> spearman;
  double test_mse = 0.0;

  nlohmann::json to_json() const {
    return {{"model_tag", model_tag},
            {"granularity", granularity},
            {"split_seed", split_seed},
            {"n_train", n_train},
            {"n_test", n_test},
            {"alpha", alpha},
            {"spearman", spearman ? nlohmann::json(*spearman) : nlohmann::json(nullptr)},
            {"test_mse", test_mse}};
  }
};

/// Ridge probe with an 80/20 split by sequence, so residues of one sequence
/// never straddle train and test. Per-sequence labels use mean-pooled
/// embeddings.
inline ProbeReport eval_probe(const std::vector<LabelRow>& labels, const EmbeddingSet& embeddings,
                              const EvalOptions& opts = {}) {
  if (labels.empty()) throw InputError("probe: no labels");
  const bool per_residue = labels.front().position.has_value();
  for (const auto& l : labels)
    if (l.position.has_value() != per_residue)
      throw InputError("probe: labels mix per-sequence and per-residue rows");
  std::vector<std::string> ids;
  for (const auto& l : labels) {
    const auto* e = embeddings.find(l.seq_id);
    if (!e) throw InputError("probe: missing embeddings for '" + l.seq_id + "'");
    if (l.position && *l.position >= e->n())
      throw InputError("probe: position " + std::to_string(*l.position + 1) + " out of range for '" + l.seq_id + "'");
    if (std::find(ids.begin(), ids.end(), l.seq_id) == ids.end()) ids.push_back(l.seq_id);
  }
  if (!per_residue && ids.size() != labels.size()) throw InputError("probe: duplicate per-sequence label");
  Rng rng(opts.split_seed);
  rng.shuffle(ids);
  const std::size_t n_train_ids = ids.size() * 4 / 5;
  const std::set<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train_ids));

  auto feature = [&](const LabelRow& l) -> VectorXd {
    const auto& e = embeddings.at(l.seq_id);
    if (l.position) return e.values.row(*l.position).cast<double>().transpose();
    return e.values.cast<double>().colwise().mean().transpose();
  };
  std::vector<VectorXd> xtr, xte;
  std::vector<double> ytr, yte;
  for (const auto& l : labels) {
    (train.count(l.seq_id) ? xtr : xte).push_back(feature(l));
    (train.count(l.seq_id) ? ytr : yte).push_back(l.label);
  }
  if (xtr.size() < 3 || xte.size() < 2) throw InputError("probe: too few labels for an 80/20 split");
  auto to_matrix = [&](const std::vector<VectorXd>& rows) {
    MatrixXd m(static_cast<Index>(rows.size()), embeddings.k());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = rows[i].transpose();
    return m;
  };
  const VectorXd y_train = Eigen::Map<const VectorXd>(ytr.data(), static_cast<Index>(ytr.size()));
  const VectorXd y_test = Eigen::Map<const VectorXd>(yte.data(), static_cast<Index>(yte.size()));
  const auto fit = num::ridge_loocv(to_matrix(xtr), y_train, opts.alpha_grid);
  const VectorXd pred = fit.predict(to_matrix(xte));
  ProbeReport rep;
  rep.model_tag = embeddings.model_tag();
  rep.granularity = per_residue ? "residue" : "sequence";
  rep.split_seed = opts.split_seed;
  rep.n_train = xtr.size();
  rep.n_test = xte.size();
  rep.alpha = fit.alpha;
  rep.test_mse = (pred - y_test).squaredNorm() / static_cast<double>(y_test.size());
  try {
    rep.spearman = num::spearman(pred, y_test);
  } catch (const InputError&) {
  }
  return rep;
}

}  // namespace rdistill
