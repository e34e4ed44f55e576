#include <gtest/gtest.h>

#include "rdistill/baselines.hpp"
#include "rdistill/chain_study.hpp"
#include "rdistill/synthetic.hpp"
#include "support/temp_dir.hpp"

namespace rdistill {
namespace {

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

template <typename T>
concept HasLevelDims = requires(const T& t) { t.level_dims; };
static_assert(!HasLevelDims<PcaConcatMap>, "the concatenation baseline must not advertise prefix levels");
static_assert(HasLevelDims<MatryoshkaEmbedding>);

Family family(std::uint64_t seed, std::vector<Index> dims = {8, 16, 32}, std::size_t n_seqs = 60) {
  FamilySpec spec;
  spec.level_dims = dims;
  spec.level_tags.clear();
  for (std::size_t i = 0; i < dims.size(); ++i) spec.level_tags.push_back("m" + std::to_string(i + 1));
  spec.n_seqs = n_seqs;
  spec.seed = seed;
  return gen_family(spec);
}

TEST(PcaConcat, DuplicatedDirectionDominates) {
  Rng rng(2);
  EmbeddingSet a("a", 1), b("b", 1);
  for (int i = 0; i < 20; ++i) {
    const MatrixXd x = rng.gaussian_matrix(7, 1);
    a.add(make_embedding("s" + std::to_string(i), x));
    b.add(make_embedding("s" + std::to_string(i), x));
  }
  auto map = train_pca_concat({a, b}, 2);
  EXPECT_NEAR(std::abs(map.projection(0, 0)), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(std::abs(map.projection(1, 0)), std::sqrt(0.5), 1e-12);
  EXPECT_EQ(map.projection(0, 0) * map.projection(1, 0) > 0, true);
  EXPECT_LE(map.explained_variance(1), 1e-12 * map.explained_variance(0));
}

TEST(PcaConcat, FullWidthIsLossless) {
  auto fam = family(21, {8, 16}, 20);
  auto map = train_pca_concat(fam.levels, 24);
  EXPECT_LE((map.projection.transpose() * map.projection - MatrixXd::Identity(24, 24)).cwiseAbs().maxCoeff(), 1e-8);
  const auto out = infer_pca_concat_sets(map, fam.levels, "pca");
  EXPECT_EQ(out.k(), 24);
  const MatrixXd concat = concatenate_sets(fam.levels);
  const MatrixXd back = reconstruct(map, stack(out).values);
  // The stored embedding is float32, so compare at float resolution.
  EXPECT_LE((back - concat).cwiseAbs().maxCoeff(), 1e-5 * concat.cwiseAbs().maxCoeff());
  const MatrixXd exact = num::center_columns(concat, map.mean) * map.projection;
  EXPECT_LE((reconstruct(map, exact) - concat).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(PcaConcat, ExplainedVarianceMatchesGramSpectrum) {
  auto fam = family(22, {8, 16}, 15);
  auto map = train_pca_concat(fam.levels, 6);
  // Oracle: the nonzero spectrum of Xc Xc^T / (L-1) equals that of the
  // covariance; build Xc with explicit loops.
  const MatrixXd concat = concatenate_sets(fam.levels);
  MatrixXd xc = concat;
  for (Index c = 0; c < xc.cols(); ++c) {
    double mean = 0;
    for (Index r = 0; r < xc.rows(); ++r) mean += concat(r, c);
    mean /= static_cast<double>(xc.rows());
    for (Index r = 0; r < xc.rows(); ++r) xc(r, c) -= mean;
  }
  const MatrixXd gram = xc * xc.transpose() / static_cast<double>(xc.rows() - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const VectorXd top = eig.eigenvalues().reverse().head(6);
  for (Index i = 0; i < 6; ++i) EXPECT_NEAR(map.explained_variance(i), top(i), 1e-9 * top(0));
}

TEST(PcaConcat, RejectsBadInputs) {
  auto fam = family(21, {8, 16}, 10);
  EXPECT_NE(error_of([&] { train_pca_concat(fam.levels, 25); }).find("out of range"), std::string::npos);
  EXPECT_THROW(train_pca_concat(fam.levels, 0), InputError);
  auto other = family(22, {8, 16}, 9);
  EXPECT_THROW(train_pca_concat({fam.levels[0], other.levels[1]}, 4), InputError);
  auto map = train_pca_concat(fam.levels, 4);
  const auto& id = fam.levels[0].entries()[0].seq_id;
  EXPECT_THROW(infer_pca_concat(map, {fam.levels[1].at(id), fam.levels[0].at(id)}), InputError);
  EXPECT_THROW(infer_pca_concat(map, {fam.levels[0].at(id)}), InputError);
}

TEST(PcaConcat, NotAPrefixOfALargerBaseline) {
  auto fam = family(21, {8, 16, 32}, 30);
  auto small = infer_pca_concat_sets(train_pca_concat({fam.levels[0], fam.levels[1]}, 16), {fam.levels[0], fam.levels[1]}, "p");
  auto big = infer_pca_concat_sets(train_pca_concat(fam.levels, 32), fam.levels, "p");
  const auto& id = fam.levels[0].entries()[0].seq_id;
  const Eigen::MatrixXf a = small.at(id).values, b = big.at(id).values.leftCols(16);
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-3f);
}

TEST(PcaConcat, ArtifactRoundTrip) {
  TempDir dir;
  auto fam = family(23, {8, 16}, 10);
  auto map = train_pca_concat(fam.levels, 12);
  save_pca_concat(map, dir / "pca");
  EXPECT_EQ(artifact_kind(dir / "pca"), "pca_concat");
  auto loaded = load_pca_concat(dir / "pca");
  EXPECT_TRUE(loaded.projection == map.projection);
  EXPECT_TRUE(loaded.mean == map.mean);
  EXPECT_EQ(loaded.level_tags, map.level_tags);
  EXPECT_THROW(load_chain(dir / "pca"), InputError);
  save_pair(train_pair(fam.levels[0], fam.levels[1]), dir / "pair");
  EXPECT_THROW(load_pca_concat(dir / "pair"), InputError);
}

// rd embedding of the training data at width k_top, stacked in double.
MatrixXd rd_training_matrix(const ChainMap& chain, const std::vector<EmbeddingSet>& sets) {
  const auto embs = infer_sets(chain, sets);
  Index rows = 0;
  for (const auto& e : embs) rows += e.n();
  MatrixXd out(rows, embs.front().k_top());
  Index r = 0;
  for (const auto& e : embs) {
    out.middleRows(r, e.n()) = e.values;
    r += e.n();
  }
  return out;
}

TEST(PcaConcat, UnconstrainedOptimumBeatsRdOnConcatenatedSpace) {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    for (const auto& dims : {std::vector<Index>{8, 16}, std::vector<Index>{8, 16, 32}}) {
      auto fam = family(seed, dims, 40);
      auto chain = train_chain(fam.levels);
      const MatrixXd concat = concatenate_sets(fam.levels);
      const MatrixXd rd = rd_training_matrix(chain, fam.levels);
      auto map = train_pca_concat(fam.levels, dims.back());
      const MatrixXd z = num::center_columns(concat, map.mean) * map.projection;
      const double base = (reconstruct(map, z) - concat).squaredNorm() / static_cast<double>(concat.size());
      const double rd_mse = affine_reconstruction_mse(rd, concat);
      EXPECT_LE(base, rd_mse * (1 + 1e-12)) << seed << " levels " << dims.size();
      // The best affine decoder from the baseline cannot do worse than its own.
      EXPECT_LE(affine_reconstruction_mse(z, concat), base * (1 + 1e-9) + 1e-15);
    }
  }
}

TEST(PcaConcat, TopLevelReconstructionFromBaselineIsNoWorse) {
  // Decoders are fit once on the whole training set; the error of H_p is
  // then compared sequence by sequence.
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    auto fam = family(seed, {8, 16}, 40);
    auto chain = train_chain(fam.levels);
    const auto stacked = stack(fam.levels[1]);
    const MatrixXd& hp = stacked.values;
    const MatrixXd rd = rd_training_matrix(chain, fam.levels);
    auto map = train_pca_concat(fam.levels, 16);
    const MatrixXd z = num::center_columns(concatenate_sets(fam.levels), map.mean) * map.projection;
    const MatrixXd err_rd = hp - num::ols_fit(rd, hp).apply(rd);
    const MatrixXd err_base = hp - num::ols_fit(z, hp).apply(z);
    EXPECT_LE(err_base.squaredNorm(), err_rd.squaredNorm()) << seed;
    std::size_t worse = 0;
    for (const auto& span : stacked.offsets)
      worse += err_base.middleRows(span.row_start, span.row_count).squaredNorm() >
               err_rd.middleRows(span.row_start, span.row_count).squaredNorm();
    EXPECT_EQ(worse, 0u) << seed;
  }
}

std::vector<PairDataset> pair_datasets(const PlantedTruth& truth, int count) {
  std::vector<PairDataset> out;
  for (int i = 0; i < count; ++i) {
    DmsSpec d;
    d.name = "ds" + std::to_string(i);
    d.seed = 100 + static_cast<std::uint64_t>(i);
    d.variants_per_count = {120, 20};
    auto b = gen_dms(truth, d);
    out.push_back({b.dataset, b.levels[0], b.levels[1]});
  }
  return out;
}

TEST(Ablation, ReportHasBothModesForEveryDataset) {
  auto fam = family(21, {8, 16}, 20);
  auto rep = ablate_pcr_vs_ols(fam.levels[0], fam.levels[1], pair_datasets(fam.truth, 3), {}, {}, 2);
  ASSERT_EQ(rep.rows.size(), 3u);
  ASSERT_EQ(rep.reports.size(), 6u);
  for (const auto& r : rep.rows) {
    EXPECT_TRUE(r.rho_pcr.has_value());
    EXPECT_TRUE(r.rho_ols.has_value());
  }
  EXPECT_EQ(rep.reports[0].model_tag, "rd.m2.pcr");
  EXPECT_EQ(rep.reports[1].model_tag, "rd.m2.ols");
  EXPECT_EQ(rep.compared, 3u);
  EXPECT_NO_THROW(compare_models(rep.reports));
  EXPECT_NE(rep.render().find("PCR >= OLS on"), std::string::npos);
}

TEST(Ablation, NoiseFreeFamilyMakesModesAgree) {
  FamilySpec spec;
  spec.level_dims = {8, 16};
  spec.level_tags = {"m1", "m2"};
  spec.n_seqs = 30;
  spec.noise_sigma = 0.0;
  auto fam = gen_family(spec);
  auto rep = ablate_pcr_vs_ols(fam.levels[0], fam.levels[1], pair_datasets(fam.truth, 3));
  for (const auto& r : rep.rows) EXPECT_LE(std::abs(*r.rho_pcr - *r.rho_ols), 0.01) << r.dataset;
}

std::vector<StudyDataset> study_datasets(const PlantedTruth& truth, int count) {
  std::vector<StudyDataset> out;
  for (int i = 0; i < count; ++i) {
    DmsSpec d;
    d.name = "ds" + std::to_string(i);
    d.seed = 200 + static_cast<std::uint64_t>(i);
    auto b = gen_dms(truth, d);
    out.push_back({b.dataset, b.levels});
  }
  return out;
}

TEST(ChainStudy, SingleConfigSingleDataset) {
  auto fam = family(21, {8, 16, 32}, 40);
  auto t = chain_config_study(fam.levels, study_datasets(fam.truth, 1), {parse_chain_config("1>2>3")});
  ASSERT_EQ(t.configs.size(), 1u);
  ASSERT_EQ(t.rho.size(), 1u);
  ASSERT_EQ(t.rho[0].size(), 1u);
  EXPECT_EQ(t.configs[0], "rd: m1→m2→m3");
  EXPECT_TRUE(t.rho[0][0].has_value());
  EXPECT_NE(t.render().find("rd: m1→m2→m3"), std::string::npos);
}

TEST(ChainStudy, ChainVersusDirectTrendIsLogged) {
  auto fam = family(21, {8, 16, 32}, 60);
  const std::vector<ChainConfig> configs{parse_chain_config("1,3"), parse_chain_config("1>2>3"), parse_chain_config("3")};
  auto t = chain_config_study(fam.levels, study_datasets(fam.truth, 3), configs, {}, {}, 3);
  EXPECT_EQ(t.configs, (std::vector<std::string>{"rd: m1→m3", "rd: m1→m2→m3", "m3"}));
  for (std::size_t d = 0; d < t.datasets.size(); ++d) {
    const double direct = *t.rho[0][d], chain = *t.rho[1][d];
    if (chain < direct - 0.02)
      std::printf("[trend] %s: chain %.3f below direct %.3f by more than 0.02\n", t.datasets[d].c_str(), chain, direct);
  }
  std::printf("%s", t.render().c_str());
}

TEST(ChainStudy, InvalidConfigsRejected) {
  auto fam = family(21, {8, 16, 32}, 10);
  auto ds = study_datasets(fam.truth, 1);
  EXPECT_NE(error_of([&] { chain_config_study(fam.levels, ds, {parse_chain_config("2>1")}); }).find("invalid config"),
            std::string::npos);
  EXPECT_NE(error_of([&] { chain_config_study(fam.levels, ds, {parse_chain_config("1>4")}); }).find("invalid config"),
            std::string::npos);
  EXPECT_THROW(parse_chain_config("a>b"), InputError);
  EXPECT_THROW(parse_chain_config("0,1"), InputError);
  EXPECT_THROW(chain_config_study(fam.levels, ds, {}), InputError);
}

}  // namespace
}  // namespace rdistill
