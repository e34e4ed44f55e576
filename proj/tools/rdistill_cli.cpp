// rdistill: command-line front end for training, inference, evaluation and
// the baseline studies. Exit codes: 0 success, 2 invalid input, 1 anything
// else.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "rdistill/artifact.hpp"
#include "rdistill/baselines.hpp"
#include "rdistill/chain_study.hpp"
#include "rdistill/distillation.hpp"
#include "rdistill/evaluation.hpp"
#include "rdistill/inference.hpp"
#include "rdistill/synthetic.hpp"

namespace fs = std::filesystem;
using namespace rdistill;

namespace {

/// Re-raises an InputError prefixed with the flag it came from.
template <typename Fn>
auto field(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const InputError& e) {
    throw InputError(name + ": " + e.what());
  }
}

std::vector<EmbeddingSet> load_sets(const std::string& flag, const std::vector<std::string>& paths) {
  std::vector<EmbeddingSet> sets;
  for (const auto& p : paths) sets.push_back(field(flag, [&] { return load_set(p); }));
  return sets;
}

TrainOptions train_options(const std::string& mode, int rank, std::uint64_t seed) {
  TrainOptions o;
  o.mode = field("--mode", [&] { return parse_mapping_mode(mode); });
  if (rank >= 0) o.rank_override = rank;
  o.seed = seed;
  return o;
}

std::string head(const VectorXd& v, Index n) {
  std::string s;
  for (Index i = 0; i < std::min(n, v.size()); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%.4g", i ? " " : "", v(i));
    s += buf;
  }
  return s;
}

void print_pair(const PairMap& m, const std::string& indent = "") {
  std::cout << indent << m.small_tag << " -> " << m.large_tag << "\n"
            << indent << "  k_r: " << m.k_r << "\n"
            << indent << "  k_p: " << m.k_p << "\n"
            << indent << "  r_j: " << m.r_j << "\n"
            << indent << "  mode: " << to_string(m.mode) << "\n"
            << indent << "  seed: " << m.seed << "\n"
            << indent << "  samples: " << m.samples << "\n"
            << indent << "  train_mse: " << m.train_mse << "\n"
            << indent << "  residual spectrum head: " << head(m.residual_singular_values, 5) << "\n"
            << indent << "  config_hash: " << m.config_hash << "\n";
  for (const auto& w : m.warnings) std::cout << indent << "  warning: " << w << "\n";
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_text(path, j.dump(2) + "\n");
}

fs::path dataset_embeddings(const fs::path& descriptor, const std::string& subdir, const std::string& tag) {
  return resolve_dms_descriptor(descriptor).parent_path() / subdir / tag / "manifest.json";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::vector<Index> dims{8, 16, 32};
  std::vector<std::string> tags;
  std::size_t n_seqs = 200;
  Index len_min = 10, len_max = 30;
  Index shared_rank = 3;
  double noise_sigma = 0.05;
  double residual_energy = 1.0;
  std::uint64_t seed = 21;
  std::size_t datasets = 1;
  std::uint64_t dms_seed = 31;
  Index wt_length = 50;
  std::vector<std::size_t> variants{200, 50};
  double score_noise = 0.01;
};

int cmd_synth(const SynthArgs& a) {
  FamilySpec spec;
  spec.level_dims = a.dims;
  if (a.tags.empty()) {
    spec.level_tags.clear();
    for (std::size_t i = 0; i < a.dims.size(); ++i) spec.level_tags.push_back("m" + std::to_string(i + 1));
  } else {
    spec.level_tags = a.tags;
  }
  spec.n_seqs = a.n_seqs;
  spec.seq_len_min = a.len_min;
  spec.seq_len_max = a.len_max;
  spec.shared_rank = a.shared_rank;
  spec.noise_sigma = a.noise_sigma;
  spec.residual_energy = {a.residual_energy};
  spec.seed = a.seed;
  const Family fam = gen_family(spec);
  const fs::path out = a.out;
  for (const auto& m : save_levels(fam.levels, out / "train")) std::cout << "train: " << m.string() << "\n";
  for (std::size_t i = 0; i < a.datasets; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "ds%02zu", i);
    DmsSpec d;
    d.name = name;
    d.wt_length = a.wt_length;
    d.variants_per_count = a.variants;
    d.score_noise = a.score_noise;
    d.seed = a.dms_seed + i;
    save_dms(gen_dms(fam.truth, d), out / "dms" / name);
    std::cout << "dataset: " << (out / "dms" / name / "dataset.json").string() << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string small, large;
  std::vector<std::string> levels;
  std::string out, mode = "pcr";
  int rank = -1;
  std::uint64_t seed = 0;
};

int cmd_train_pair(const TrainArgs& a) {
  const auto opts = train_options(a.mode, a.rank, a.seed);
  const auto r = field("--small", [&] { return load_set(a.small); });
  const auto p = field("--large", [&] { return load_set(a.large); });
  const PairMap m = train_pair(r, p, opts);
  save_pair(m, a.out);
  print_pair(m);
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

int cmd_train_chain(const TrainArgs& a) {
  const auto opts = train_options(a.mode, a.rank, a.seed);
  const ChainMap chain = train_chain(load_sets("--levels", a.levels), opts);
  save_chain(chain, a.out);
  for (std::size_t i = 0; i < chain.stages.size(); ++i) {
    std::cout << "stage " << i + 1 << ": ";
    print_pair(chain.stages[i]);
  }
  std::cout << "chain_hash: " << chain_hash(chain) << "\nwrote " << a.out << "\n";
  return 0;
}

struct TrainPcaArgs {
  std::vector<std::string> levels;
  std::string out;
  Index k = 0;
};

int cmd_train_pca(const TrainPcaArgs& a) {
  const auto map = train_pca_concat(load_sets("--levels", a.levels), a.k);
  save_pca_concat(map, a.out);
  std::cout << "pca_concat k_target " << map.k_target << ", explained variance head " << head(map.explained_variance, 5)
            << "\nwrote " << a.out << "\n";
  return 0;
}

struct InferArgs {
  std::string artifact, out, expect_hash;
  std::vector<std::string> levels;
};

int cmd_infer(const InferArgs& a) {
  const auto kind = field("--artifact", [&] { return artifact_kind(a.artifact); });
  auto sets = load_sets("--levels", a.levels);
  if (kind == "pca_concat") {
    const auto map = field("--artifact", [&] { return load_pca_concat(a.artifact); });
    const auto out = infer_pca_concat_sets(map, sets, "pca." + map.level_tags.back());
    save_set(out, a.out, {{"level_tags", map.level_tags}});
    std::cout << "wrote " << out.size() << " embeddings (" << out.model_tag() << ", width " << out.k() << ") to " << a.out
              << "\n";
    return 0;
  }
  const ChainMap chain = field("--artifact", [&] { return load_chain(a.artifact); });
  if (!a.expect_hash.empty()) field("--expect-chain-hash", [&] { require_chain_hash(chain, a.expect_hash); });
  const auto embs = infer_sets(chain, sets);
  const auto& h = chain.hierarchy;
  std::vector<std::string> tags;
  for (const auto& l : h.levels()) tags.push_back(l.tag);
  const auto set = prefix_set(embs, h.top().dim, rd_tag(h.top().tag));
  save_set(set, a.out, {{"level_dims", h.dims()}, {"level_tags", tags}, {"chain_hash", chain_hash(chain)}});
  std::cout << "wrote " << set.size() << " embeddings (" << set.model_tag() << ", chain_hash " << chain_hash(chain)
            << ") to " << a.out << "\n";
  return 0;
}

struct PrefixArgs {
  std::string input, out;
  Index k = 0;
};

int cmd_prefix(const PrefixArgs& a) {
  const fs::path manifest_path = a.input;
  const Manifest m = field("--input", [&] { return read_manifest(manifest_path); });
  if (!m.extra.contains("level_dims") || !m.extra.contains("level_tags"))
    throw InputError("--input: manifest has no level_dims; only rd embeddings have Matryoshka prefixes");
  const auto dims = m.extra.at("level_dims").get<std::vector<Index>>();
  const auto tags = m.extra.at("level_tags").get<std::vector<std::string>>();
  const auto it = std::find(dims.begin(), dims.end(), a.k);
  if (it == dims.end()) throw InputError("--k: " + std::to_string(a.k) + " is not a level width");
  const auto j = static_cast<std::size_t>(it - dims.begin());
  const std::string tag = j == 0 ? tags[0] : rd_tag(tags[j]);
  const auto full = field("--input", [&] { return load_set(manifest_path); });
  EmbeddingSet out(tag, a.k);
  for (const auto& e : full) out.add(EmbeddingMatrix{e.seq_id, e.values.leftCols(a.k)});
  json extra = json::object();
  if (j > 0) {
    extra["level_dims"] = std::vector<Index>(dims.begin(), it + 1);
    extra["level_tags"] = std::vector<std::string>(tags.begin(), tags.begin() + static_cast<std::ptrdiff_t>(j) + 1);
  }
  save_set(out, a.out, extra);
  std::cout << "wrote " << out.size() << " prefixes (" << tag << ", width " << a.k << ") to " << a.out << "\n";
  return 0;
}

EvalOptions eval_options(std::uint64_t seed, const std::vector<double>& alphas) {
  EvalOptions o;
  o.split_seed = seed;
  if (!alphas.empty()) o.alpha_grid = alphas;
  return o;
}

struct EvalArgs {
  std::vector<std::string> datasets, embeddings;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<double> alphas;
  std::size_t jobs = 1;
};

int cmd_eval(const EvalArgs& a) {
  if (a.datasets.size() != a.embeddings.size())
    throw InputError("--embeddings: expected one manifest per --dataset (" + std::to_string(a.datasets.size()) +
                     "), got " + std::to_string(a.embeddings.size()));
  const auto opts = eval_options(a.seed, a.alphas);
  std::vector<EvalReport> reports(a.datasets.size());
  parallel_for(a.datasets.size(), a.jobs, [&](std::size_t i) {
    const auto ds = field("--dataset", [&] { return read_dms_descriptor(a.datasets[i]); });
    const auto set = field("--embeddings", [&] { return load_set(a.embeddings[i]); });
    reports[i] = eval_dms(ds, set, opts);
  });
  for (const auto& r : reports) {
    const fs::path path = fs::path(a.out) / (r.dataset + "." + r.model_tag + ".json");
    write_json(path, r.to_json());
    std::cout << r.dataset << " " << r.model_tag << " alpha " << r.alpha;
    for (const auto& b : r.buckets)
      std::cout << "  " << b.mutations << "-mut rho " << (b.spearman ? detail::format("%.4f", *b.spearman) : "n/a");
    std::cout << "\n  -> " << path.string() << "\n";
  }
  return 0;
}

struct CompareArgs {
  std::vector<std::string> reports;
  std::string out;
};

int cmd_compare(const CompareArgs& a) {
  std::vector<fs::path> files;
  for (const auto& r : a.reports) {
    if (fs::is_directory(r)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(r))
        if (e.path().extension() == ".json") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(r);
    }
  }
  std::vector<EvalReport> reports;
  for (const auto& f : files) {
    if (!fs::exists(f)) throw InputError("--reports: not found: " + f.string());
    reports.push_back(field("--reports", [&] { return read_report(f); }));
  }
  const auto table = compare_models(reports);
  std::cout << render_win_table(table) << render_mean_table(table);
  if (!a.out.empty()) write_json(a.out, table.to_json());
  return 0;
}

struct AblateArgs {
  std::string small, large, out, subdir = "embeddings";
  std::vector<std::string> datasets;
  int rank = -1;
  std::uint64_t seed = 0, split_seed = 0;
  std::size_t jobs = 1;
};

int cmd_ablate(const AblateArgs& a) {
  const auto r = field("--small", [&] { return load_set(a.small); });
  const auto p = field("--large", [&] { return load_set(a.large); });
  std::vector<PairDataset> ds;
  for (const auto& d : a.datasets) {
    PairDataset pd{field("--datasets", [&] { return read_dms_descriptor(d); }),
                   field("--datasets", [&] { return load_set(dataset_embeddings(d, a.subdir, r.model_tag())); }),
                   field("--datasets", [&] { return load_set(dataset_embeddings(d, a.subdir, p.model_tag())); })};
    ds.push_back(std::move(pd));
  }
  const auto rep = ablate_pcr_vs_ols(r, p, ds, train_options("pcr", a.rank, a.seed), eval_options(a.split_seed, {}), a.jobs);
  std::cout << rep.render();
  if (!a.out.empty()) write_json(a.out, rep.to_json());
  return 0;
}

struct StudyArgs {
  std::vector<std::string> levels, datasets, chains;
  std::string out, subdir = "embeddings", mode = "pcr";
  std::uint64_t seed = 0, split_seed = 0;
  std::size_t jobs = 1;
};

int cmd_study(const StudyArgs& a) {
  const auto train = load_sets("--levels", a.levels);
  std::vector<ChainConfig> configs;
  for (const auto& c : a.chains) configs.push_back(field("--chain", [&] { return parse_chain_config(c); }));
  std::vector<StudyDataset> ds;
  for (const auto& d : a.datasets) {
    StudyDataset sd{field("--datasets", [&] { return read_dms_descriptor(d); }), {}};
    for (const auto& t : train)
      sd.levels.push_back(field("--datasets", [&] { return load_set(dataset_embeddings(d, a.subdir, t.model_tag())); }));
    ds.push_back(std::move(sd));
  }
  const auto table = chain_config_study(train, ds, configs, train_options(a.mode, -1, a.seed),
                                        eval_options(a.split_seed, {}), a.jobs);
  std::cout << table.render();
  if (!a.out.empty()) write_json(a.out, table.to_json());
  return 0;
}

int cmd_inspect(const std::string& path) {
  const auto kind = field("--artifact", [&] { return artifact_kind(path); });
  std::cout << "kind: " << kind << "\n";
  if (kind == "pair") {
    print_pair(load_pair(path));
  } else if (kind == "chain") {
    const auto chain = load_chain(path);
    std::cout << "levels:";
    for (const auto& l : chain.hierarchy.levels()) std::cout << " " << l.tag << "(" << l.dim << ")";
    std::cout << "\nmode: " << to_string(chain.stages.front().mode) << "\nchain_hash: " << chain_hash(chain) << "\n";
    for (std::size_t i = 0; i < chain.stages.size(); ++i) {
      std::cout << "stage " << i + 1 << ": ";
      print_pair(chain.stages[i], "  ");
    }
  } else if (kind == "pca_concat") {
    const auto map = load_pca_concat(path);
    std::cout << "levels:";
    for (std::size_t i = 0; i < map.level_tags.size(); ++i) std::cout << " " << map.level_tags[i] << "(" << map.input_dims[i] << ")";
    std::cout << "\nk_target: " << map.k_target << "\nexplained variance head: " << head(map.explained_variance, 5) << "\n";
  } else {
    throw InputError("--artifact: unknown artifact kind '" + kind + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reverse distillation of embedding hierarchies"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML file with one [subcommand] section; flags override it");
  app.allow_config_extras(false);
  std::function<int()> action;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a planted embedding family and DMS datasets");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--dims", synth.dims, "Level widths")->delimiter(',');
  s->add_option("--tags", synth.tags, "Level tags (default m1,m2,...)")->delimiter(',');
  s->add_option("--n-seqs", synth.n_seqs);
  s->add_option("--len-min", synth.len_min);
  s->add_option("--len-max", synth.len_max);
  s->add_option("--shared-rank", synth.shared_rank);
  s->add_option("--noise-sigma", synth.noise_sigma);
  s->add_option("--residual-energy", synth.residual_energy, "Variance of each planted residual factor");
  s->add_option("--seed", synth.seed);
  s->add_option("--datasets", synth.datasets, "Number of DMS datasets");
  s->add_option("--dms-seed", synth.dms_seed, "Seed of the first dataset; later ones add 1 each");
  s->add_option("--wt-length", synth.wt_length);
  s->add_option("--variants", synth.variants, "Variants with 1, 2, ... mutations")->delimiter(',');
  s->add_option("--score-noise", synth.score_noise, "Score noise relative to the clean score spread");
  s->callback([&] { action = [&] { return cmd_synth(synth); }; });

  TrainArgs pair_args, chain_args;
  auto* tp = app.add_subcommand("train-pair", "Fit a pair map between two levels");
  tp->add_option("--small", pair_args.small, "Manifest of the smaller model")->required();
  tp->add_option("--large", pair_args.large, "Manifest of the larger model")->required();
  tp->add_option("--out", pair_args.out, "Artifact directory")->required();
  tp->add_option("--mode", pair_args.mode, "pcr or ols");
  tp->add_option("--rank", pair_args.rank, "Override the selected PCR rank");
  tp->add_option("--seed", pair_args.seed);
  tp->callback([&] { action = [&] { return cmd_train_pair(pair_args); }; });

  auto* tc = app.add_subcommand("train-chain", "Fit a chain over levels of increasing width");
  tc->add_option("--levels", chain_args.levels, "Manifests, smallest first")->required()->delimiter(',');
  tc->add_option("--out", chain_args.out, "Artifact directory")->required();
  tc->add_option("--mode", chain_args.mode, "pcr or ols");
  tc->add_option("--rank", chain_args.rank, "Override the selected PCR rank at every stage");
  tc->add_option("--seed", chain_args.seed);
  tc->callback([&] { action = [&] { return cmd_train_chain(chain_args); }; });

  TrainPcaArgs pca_args;
  auto* tpca = app.add_subcommand("train-pca-concat", "Fit the PCA-on-concatenation baseline");
  tpca->add_option("--levels", pca_args.levels, "Manifests")->required()->delimiter(',');
  tpca->add_option("--k", pca_args.k, "Output width")->required();
  tpca->add_option("--out", pca_args.out, "Artifact directory")->required();
  tpca->callback([&] { action = [&] { return cmd_train_pca(pca_args); }; });

  InferArgs infer;
  auto* inf = app.add_subcommand("infer", "Apply a pair, chain or pca_concat artifact");
  inf->add_option("--artifact", infer.artifact)->required();
  inf->add_option("--levels", infer.levels, "Manifests, one per level")->required()->delimiter(',');
  inf->add_option("--out", infer.out, "Output directory")->required();
  inf->add_option("--expect-chain-hash", infer.expect_hash);
  inf->callback([&] { action = [&] { return cmd_infer(infer); }; });

  PrefixArgs prefix_args;
  auto* pre = app.add_subcommand("prefix", "Cut rd embeddings to a level width");
  pre->add_option("--input", prefix_args.input, "Manifest written by infer")->required();
  pre->add_option("--k", prefix_args.k, "Level width")->required();
  pre->add_option("--out", prefix_args.out, "Output directory")->required();
  pre->callback([&] { action = [&] { return cmd_prefix(prefix_args); }; });

  EvalArgs eval;
  auto* ev = app.add_subcommand("eval", "Ridge probe on DMS datasets");
  ev->add_option("--dataset", eval.datasets, "dataset.json descriptors or their directories")->required()->delimiter(',');
  ev->add_option("--embeddings", eval.embeddings, "Manifest per dataset")->required()->delimiter(',');
  ev->add_option("--out", eval.out, "Report directory")->required();
  ev->add_option("--seed", eval.seed, "Split seed");
  ev->add_option("--alphas", eval.alphas, "Ridge alpha grid")->delimiter(',');
  ev->add_option("--jobs", eval.jobs)->check(CLI::PositiveNumber);
  ev->callback([&] { action = [&] { return cmd_eval(eval); }; });

  CompareArgs cmp;
  auto* co = app.add_subcommand("compare", "Win-rate and mean/std tables from eval reports");
  co->add_option("--reports", cmp.reports, "Report files or directories")->required()->delimiter(',');
  co->add_option("--out", cmp.out, "Optional JSON output");
  co->callback([&] { action = [&] { return cmd_compare(cmp); }; });

  AblateArgs abl;
  auto* ab = app.add_subcommand("ablate", "PCR versus OLS pair maps on DMS datasets");
  ab->add_option("--small", abl.small)->required();
  ab->add_option("--large", abl.large)->required();
  ab->add_option("--datasets", abl.datasets, "dataset.json descriptors or their directories")->required()->delimiter(',');
  ab->add_option("--embeddings-subdir", abl.subdir, "Per-dataset directory holding <tag>/manifest.json");
  ab->add_option("--rank", abl.rank);
  ab->add_option("--seed", abl.seed);
  ab->add_option("--split-seed", abl.split_seed);
  ab->add_option("--jobs", abl.jobs)->check(CLI::PositiveNumber);
  ab->add_option("--out", abl.out, "Optional JSON output");
  ab->callback([&] { action = [&] { return cmd_ablate(abl); }; });

  StudyArgs study;
  auto* st = app.add_subcommand("study", "Compare chain configurations on DMS datasets");
  st->add_option("--levels", study.levels, "Training manifests, smallest first")->required()->delimiter(',');
  st->add_option("--datasets", study.datasets, "dataset.json descriptors or their directories")->required()->delimiter(',');
  st->add_option("--chain", study.chains, "Configuration like 1>2>3, 1>3 or 3 (repeatable)")->required();
  st->add_option("--embeddings-subdir", study.subdir);
  st->add_option("--mode", study.mode);
  st->add_option("--seed", study.seed);
  st->add_option("--split-seed", study.split_seed);
  st->add_option("--jobs", study.jobs)->check(CLI::PositiveNumber);
  st->add_option("--out", study.out, "Optional JSON output");
  st->callback([&] { action = [&] { return cmd_study(study); }; });

  std::string inspect_path;
  auto* ins = app.add_subcommand("inspect", "Print artifact metadata");
  ins->add_option("--artifact", inspect_path)->required();
  ins->callback([&] { action = [&] { return cmd_inspect(inspect_path); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    if (auto* cfg = app.get_config_ptr(); cfg && cfg->count()) {
      // A config file may only configure the command being run.
      const auto selected = app.get_subcommands().front()->get_name();
      for (const auto& item : CLI::ConfigTOML().from_file(cfg->as<std::string>()))
        if (!item.parents.empty() && item.parents.front() != selected)
          throw InputError("--config: section [" + item.parents.front() + "] does not belong to '" + selected + "'");
    }
    return action();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
