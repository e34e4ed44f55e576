#pragma once

// Seeded generators for embedding families with planted nested structure and
// for DMS datasets scored by a linear functional of the planted latents.
//
// Latent model: every residue carries independent Gaussian factors split
// into groups.  Group 0 ("shared", shared_rank factors) is visible at every
// level; group j >= 1 (residual_rank[j-1] factors) first appears at level j
// and stays visible at all larger levels.  Level i embeds its visible groups
// into disjoint column blocks of a random orthonormal k_i x k_i frame, so the
// directions new at level i are exactly orthogonal to everything level i-1
// can explain.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdistill/dms.hpp"
#include "rdistill/embedding_store.hpp"
#include "rdistill/error.hpp"
#include "rdistill/random.hpp"

namespace rdistill {

struct FamilySpec {
  std::vector<Eigen::Index> level_dims{8, 16, 32};
  std::vector<std::string> level_tags;  ///< defaults to m1, m2, ...
  std::size_t n_seqs = 200;
  Eigen::Index seq_len_min = 10;
  Eigen::Index seq_len_max = 30;
  Eigen::Index shared_rank = 3;
  /// Latent factors first visible at levels 2..m; empty means half of each
  /// dimension increment.
  std::vector<Eigen::Index> residual_rank;
  /// Per-factor variance of the residual groups (levels 2..m). A single
  /// value applies to every level; empty means 1.
  std::vector<double> residual_energy;
  double noise_sigma = 0.05;
  std::uint64_t seed = 21;

  std::size_t levels() const { return level_dims.size(); }

  std::string tag(std::size_t level) const {
    return level_tags.empty() ? "m" + std::to_string(level + 1) : level_tags[level];
  }

  Eigen::Index residual_rank_at(std::size_t level) const {
    if (level == 0) return 0;
    if (residual_rank.empty()) return (level_dims[level] - level_dims[level - 1]) / 2;
    return residual_rank[level - 1];
  }

  double residual_energy_at(std::size_t level) const {
    if (residual_energy.empty()) return 1.0;
    if (residual_energy.size() == 1) return residual_energy[0];
    return residual_energy[level - 1];
  }

  /// Latent factors visible at `level` (0-based).
  Eigen::Index visible_rank(std::size_t level) const {
    Eigen::Index r = shared_rank;
    for (std::size_t j = 1; j <= level; ++j) r += residual_rank_at(j);
    return r;
  }

  void validate() const {
    const std::size_t m = levels();
    if (m < 1) throw InputError("family spec: level_dims is empty");
    for (std::size_t i = 0; i < m; ++i) {
      if (level_dims[i] < 1) throw InputError("family spec: level_dims must be positive");
      if (i && level_dims[i] <= level_dims[i - 1]) throw InputError("family spec: non-increasing dims");
    }
    if (!level_tags.empty() && level_tags.size() != m)
      throw InputError("family spec: level_tags must match level_dims");
    if (n_seqs < 1) throw InputError("family spec: n_seqs must be >= 1");
    if (seq_len_min < 1 || seq_len_max < seq_len_min) throw InputError("family spec: bad seq_len range");
    if (shared_rank < 0 || shared_rank > level_dims[0])
      throw InputError("family spec: shared_rank must be in [0, min(level_dims)]");
    if (!residual_rank.empty() && residual_rank.size() != m - 1)
      throw InputError("family spec: residual_rank needs one entry per level after the first");
    if (!residual_energy.empty() && residual_energy.size() != 1 && residual_energy.size() != m - 1)
      throw InputError("family spec: residual_energy needs 1 or (levels - 1) entries");
    for (double e : residual_energy)
      if (!(e >= 0.0)) throw InputError("family spec: residual_energy must be >= 0");
    for (std::size_t i = 1; i < m; ++i) {
      const auto r = residual_rank_at(i);
      if (r < 0 || r > level_dims[i] - level_dims[i - 1])
        throw InputError("family spec: residual_rank at level " + std::to_string(i + 1) +
                         " exceeds the dimension increment");
    }
    for (std::size_t i = 0; i < m; ++i)
      if (visible_rank(i) > level_dims[i])
        throw InputError("family spec: planted rank exceeds level dimension at level " + std::to_string(i + 1));
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw InputError("family spec: noise_sigma must be >= 0");
  }
};

struct PlantedTruth {
  FamilySpec spec;
  Eigen::Index latent_dim = 0;
  std::vector<Eigen::Index> group_offset;  ///< latent column where group g starts
  std::vector<Eigen::Index> group_size;
  std::vector<Eigen::MatrixXd> frames;     ///< per level, k_i x k_i orthonormal
  std::vector<Eigen::MatrixXd> loadings;   ///< per level, latent_dim x k_i

  /// Columns of level i's frame carrying the shared group and every residual
  /// group of levels < i: the image of what level i-1 already encodes.
  Eigen::MatrixXd shared_basis(std::size_t level) const {
    const Eigen::Index cols = spec.visible_rank(level) - group_size[level];
    return frames[level].leftCols(level == 0 ? spec.shared_rank : cols);
  }

  /// Columns of level i's frame carrying the factors new at level i.
  Eigen::MatrixXd residual_basis(std::size_t level) const {
    if (level == 0) throw InputError("residual_basis: level 1 has no residual group");
    return frames[level].middleCols(spec.visible_rank(level) - group_size[level], group_size[level]);
  }

  /// Noise-free embedding of per-residue latents at `level`.
  Eigen::MatrixXd embed(const Eigen::MatrixXd& latent, std::size_t level) const { return latent * loadings[level]; }
};

struct Family {
  std::vector<EmbeddingSet> levels;
  PlantedTruth truth;
};

inline PlantedTruth plant_structure(const FamilySpec& spec, Rng& rng) {
  spec.validate();
  PlantedTruth t;
  t.spec = spec;
  const std::size_t m = spec.levels();
  t.group_size.push_back(spec.shared_rank);
  for (std::size_t i = 1; i < m; ++i) t.group_size.push_back(spec.residual_rank_at(i));
  Eigen::Index off = 0;
  for (auto g : t.group_size) {
    t.group_offset.push_back(off);
    off += g;
  }
  t.latent_dim = off;
  for (std::size_t i = 0; i < m; ++i) {
    const Eigen::Index k = spec.level_dims[i];
    t.frames.push_back(random_orthonormal(rng, k, k));
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(t.latent_dim, k);
    Eigen::Index col = 0;
    for (std::size_t g = 0; g <= i; ++g) {
      const Eigen::Index size = t.group_size[g];
      if (size == 0) continue;
      // A random rotation inside the group keeps latents off the frame axes.
      const Eigen::MatrixXd mix = random_orthonormal(rng, size, size);
      const double amp = g == 0 ? 1.0 : std::sqrt(spec.residual_energy_at(g));
      a.middleRows(t.group_offset[g], size) = amp * mix * t.frames[i].middleCols(col, size).transpose();
      col += size;
    }
    t.loadings.push_back(std::move(a));
  }
  return t;
}

inline Family gen_family(const FamilySpec& spec) {
  Rng rng(spec.seed);
  Family fam{{}, plant_structure(spec, rng)};
  const std::size_t m = spec.levels();
  for (std::size_t i = 0; i < m; ++i) fam.levels.emplace_back(spec.tag(i), spec.level_dims[i]);
  const auto span = static_cast<std::uint64_t>(spec.seq_len_max - spec.seq_len_min + 1);
  for (std::size_t s = 0; s < spec.n_seqs; ++s) {
    const auto n = spec.seq_len_min + static_cast<Eigen::Index>(rng.below(span));
    const Eigen::MatrixXd latent = rng.gaussian_matrix(n, fam.truth.latent_dim);
    char id[32];
    std::snprintf(id, sizeof id, "seq%05zu", s);
    for (std::size_t i = 0; i < m; ++i) {
      Eigen::MatrixXd h = fam.truth.embed(latent, i);
      h += rng.gaussian_matrix(n, spec.level_dims[i], spec.noise_sigma);
      fam.levels[i].add(make_embedding(id, h));
    }
  }
  return fam;
}

// ---------------------------------------------------------------------------
// Synthetic DMS

struct DmsSpec {
  std::string name = "ds0";
  Eigen::Index wt_length = 50;
  /// Number of variants with 1, 2, ... mutations.
  std::vector<std::size_t> variants_per_count{200, 50};
  /// Score noise standard deviation relative to the spread of clean scores.
  double score_noise = 0.01;
  /// Multiplier on the planted functional; 0 yields constant scores.
  double functional_scale = 1.0;
  std::uint64_t seed = 31;
};

struct DmsBundle {
  DmsDataset dataset;
  std::vector<EmbeddingSet> levels;  ///< wild type first, then variants in dataset order
  Eigen::VectorXd functional;        ///< latent_dim weights of the clean score
};

inline constexpr char kAminoAcids[] = "ACDEFGHIKLMNPQRSTVWY";

/// Draws a wild type, per-(position, residue) latent effects, and variants
/// whose scores are functional . (sum of their effects) plus Gaussian noise.
/// Every sequence is embedded at every level with fresh embedding noise.
inline DmsBundle gen_dms(const PlantedTruth& truth, const DmsSpec& spec) {
  if (spec.variants_per_count.empty()) throw InputError("dms spec: variants_per_count is empty");
  if (spec.wt_length < 1) throw InputError("dms spec: wt_length must be >= 1");
  if (!(spec.score_noise >= 0.0)) throw InputError("dms spec: score_noise must be >= 0");
  const Eigen::Index len = spec.wt_length;
  if (static_cast<Eigen::Index>(spec.variants_per_count.size()) > len)
    throw InputError("dms spec: more mutations per variant than wild-type positions");
  if (spec.variants_per_count[0] > static_cast<std::size_t>(len) * 19)
    throw InputError("dms spec: more single mutants requested than exist");

  Rng rng(spec.seed);
  const Eigen::Index d = truth.latent_dim;
  std::string wt_seq(static_cast<std::size_t>(len), 'A');
  for (auto& c : wt_seq) c = kAminoAcids[rng.below(20)];
  const Eigen::MatrixXd wt_latent = rng.gaussian_matrix(len, d);
  // effects[p * 20 + a] is the latent shift of substituting residue a at p.
  const Eigen::MatrixXd effects = rng.gaussian_matrix(len * 20, d);
  const Eigen::VectorXd w = spec.functional_scale * rng.gaussian_matrix(d, 1);

  DmsBundle out;
  out.functional = w;
  out.dataset.name = spec.name;
  out.dataset.wt_seq_id = spec.name + "_wt";

  std::set<std::string> seen;
  std::vector<double> clean;
  std::vector<Eigen::MatrixXd> latents;
  for (std::size_t bucket = 0; bucket < spec.variants_per_count.size(); ++bucket) {
    const std::size_t count = spec.variants_per_count[bucket];
    std::size_t made = 0, attempts = 0;
    while (made < count) {
      if (++attempts > 100 * count + 1000)
        throw InputError("dms spec: cannot draw " + std::to_string(count) + " distinct " +
                         std::to_string(bucket + 1) + "-mutation variants");
      std::vector<long> positions;
      while (positions.size() < bucket + 1) {
        const auto p = static_cast<long>(rng.below(static_cast<std::uint64_t>(len)));
        if (std::find(positions.begin(), positions.end(), p) == positions.end()) positions.push_back(p);
      }
      std::sort(positions.begin(), positions.end());
      Variant v;
      for (long p : positions) {
        const char wt = wt_seq[static_cast<std::size_t>(p)];
        char mut;
        do {
          mut = kAminoAcids[rng.below(20)];
        } while (mut == wt);
        v.mutations.push_back({p, wt, mut});
      }
      const auto key = format_mutations(v.mutations);
      if (!seen.insert(key).second) continue;
      Eigen::MatrixXd lat = wt_latent;
      double score = 0.0;
      for (const auto& mu : v.mutations) {
        const auto a = static_cast<Eigen::Index>(std::string_view(kAminoAcids).find(mu.mut_aa));
        const Eigen::RowVectorXd shift = effects.row(mu.position * 20 + a);
        lat.row(mu.position) += shift;
        score += shift.dot(w.transpose());
      }
      char id[48];
      std::snprintf(id, sizeof id, "%s_v%05zu", spec.name.c_str(), out.dataset.variants.size());
      v.mut_seq_id = id;
      out.dataset.variants.push_back(std::move(v));
      clean.push_back(score);
      latents.push_back(std::move(lat));
      ++made;
    }
  }

  double mean = 0.0;
  for (double c : clean) mean += c;
  mean /= static_cast<double>(clean.size());
  double var = 0.0;
  for (double c : clean) var += (c - mean) * (c - mean);
  const double sd = clean.size() > 1 ? std::sqrt(var / static_cast<double>(clean.size() - 1)) : 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double noise = rng.gaussian();
    out.dataset.variants[i].score = clean[i] + spec.score_noise * sd * noise;
  }

  const auto& fspec = truth.spec;
  for (std::size_t lvl = 0; lvl < fspec.levels(); ++lvl) {
    EmbeddingSet set(fspec.tag(lvl), fspec.level_dims[lvl]);
    const double sigma = fspec.noise_sigma;
    Eigen::MatrixXd h = truth.embed(wt_latent, lvl) + rng.gaussian_matrix(len, fspec.level_dims[lvl], sigma);
    set.add(make_embedding(out.dataset.wt_seq_id, h));
    for (std::size_t i = 0; i < latents.size(); ++i) {
      h = truth.embed(latents[i], lvl) + rng.gaussian_matrix(len, fspec.level_dims[lvl], sigma);
      set.add(make_embedding(out.dataset.variants[i].mut_seq_id, h));
    }
    out.levels.push_back(std::move(set));
  }
  return out;
}

/// Writes one manifest directory per level under `dir`; returns manifest paths.
inline std::vector<fs::path> save_levels(const std::vector<EmbeddingSet>& levels, const fs::path& dir) {
  std::vector<fs::path> manifests;
  for (const auto& set : levels) {
    save_set(set, dir / set.model_tag());
    manifests.push_back(dir / set.model_tag() / "manifest.json");
  }
  return manifests;
}

/// Layout: dir/dataset.json, dir/variants.csv, dir/embeddings/<tag>/.
inline void save_dms(const DmsBundle& bundle, const fs::path& dir) {
  write_dms_descriptor(bundle.dataset, dir);
  save_levels(bundle.levels, dir / "embeddings");
}

}  // namespace rdistill
