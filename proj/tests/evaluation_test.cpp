#include <gtest/gtest.h>

#include <set>

#include "rdistill/evaluation.hpp"
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

PlantedTruth small_truth() {
  FamilySpec spec;
  spec.n_seqs = 4;
  return gen_family(spec).truth;
}

class EvalFixture : public ::testing::Test {
 protected:
  PlantedTruth truth = small_truth();
  DmsBundle bundle = gen_dms(truth, DmsSpec{});
};

TEST_F(EvalFixture, PlantedLinearSinglesAreRecovered) {
  auto rep = eval_dms(bundle.dataset, bundle.levels[2]);
  const auto* b1 = rep.bucket(1);
  ASSERT_NE(b1, nullptr);
  ASSERT_TRUE(b1->spearman.has_value());
  EXPECT_GE(*b1->spearman, 0.95);
  EXPECT_EQ(b1->n_train, 160u);
  EXPECT_EQ(b1->n_test, 40u);
  const auto* b2 = rep.bucket(2);
  ASSERT_NE(b2, nullptr);
  EXPECT_EQ(b2->n_train, 0u);
  EXPECT_EQ(b2->n_test, 50u);
  EXPECT_TRUE(b2->spearman.has_value());
}

TEST_F(EvalFixture, VariantFeatureIsMeanRowDifference) {
  const auto& set = bundle.levels[1];
  const auto& wt = set.at(bundle.dataset.wt_seq_id);
  const auto& v = bundle.dataset.variants.back();  // a double mutant
  ASSERT_EQ(v.mutation_count(), 2u);
  const auto& mut = set.at(v.mut_seq_id);
  const VectorXd f = variant_feature(wt, mut, v.positions());
  for (Index c = 0; c < set.k(); ++c) {
    double expected = 0;
    for (long p : v.positions()) expected += static_cast<double>(mut.values(p, c)) - static_cast<double>(wt.values(p, c));
    EXPECT_NEAR(f(c), expected / 2.0, 1e-12);
  }
  EXPECT_THROW(variant_feature(wt, mut, {50}), InputError);
  EXPECT_THROW(variant_feature(wt, mut, {}), InputError);
}

TEST_F(EvalFixture, TrainingUsesOnlySingleMutantsAndTestIsDisjoint) {
  auto rep = eval_dms(bundle.dataset, bundle.levels[2], {.split_seed = 5});
  std::set<std::string> train(rep.train_ids.begin(), rep.train_ids.end());
  EXPECT_EQ(train.size(), rep.train_ids.size());
  EXPECT_EQ(train.size(), 160u);
  for (const auto& v : bundle.dataset.variants)
    if (train.count(v.mut_seq_id)) EXPECT_EQ(v.mutation_count(), 1u) << v.mut_seq_id;
  auto other = eval_dms(bundle.dataset, bundle.levels[2], {.split_seed = 6});
  EXPECT_NE(other.train_ids, rep.train_ids);
  EXPECT_EQ(other.split_seed, 6u);
}

TEST_F(EvalFixture, RepeatedRunsProduceIdenticalReports) {
  auto a = eval_dms(bundle.dataset, bundle.levels[1]);
  auto b = eval_dms(bundle.dataset, bundle.levels[1]);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST_F(EvalFixture, PositiveAffineRescaleOfScoresKeepsRho) {
  auto scaled = bundle.dataset;
  for (auto& v : scaled.variants) v.score = 3.0 * v.score + 5.0;
  auto a = eval_dms(bundle.dataset, bundle.levels[0]);
  auto b = eval_dms(scaled, bundle.levels[0]);
  EXPECT_EQ(a.alpha, b.alpha);
  for (std::size_t i = 0; i < a.buckets.size(); ++i) EXPECT_NEAR(*a.buckets[i].spearman, *b.buckets[i].spearman, 1e-9);
}

TEST_F(EvalFixture, GateNeedsOneHundredSingles) {
  DmsSpec spec;
  spec.variants_per_count = {99, 20};
  auto small = gen_dms(truth, spec);
  const auto msg = error_of([&] { eval_dms(small.dataset, small.levels[0]); });
  EXPECT_NE(msg.find("99"), std::string::npos) << msg;
  spec.variants_per_count = {100};
  auto enough = gen_dms(truth, spec);
  EXPECT_NO_THROW(eval_dms(enough.dataset, enough.levels[0]));
}

TEST_F(EvalFixture, MissingEmbeddingsAreNamed) {
  EmbeddingSet partial(bundle.levels[0].model_tag(), bundle.levels[0].k());
  for (const auto& e : bundle.levels[0])
    if (e.seq_id != "ds0_v00007") partial.add(e);
  EXPECT_NE(error_of([&] { eval_dms(bundle.dataset, partial); }).find("ds0_v00007"), std::string::npos);
  EmbeddingSet no_wt(bundle.levels[0].model_tag(), bundle.levels[0].k());
  for (const auto& e : bundle.levels[0])
    if (e.seq_id != "ds0_wt") no_wt.add(e);
  EXPECT_NE(error_of([&] { eval_dms(bundle.dataset, no_wt); }).find("wild type"), std::string::npos);
}

TEST_F(EvalFixture, TinyBucketIsUndefinedWithNote) {
  DmsSpec spec;
  spec.variants_per_count = {100, 10, 1};
  auto b = gen_dms(truth, spec);
  auto rep = eval_dms(b.dataset, b.levels[2]);
  const auto* b3 = rep.bucket(3);
  ASSERT_NE(b3, nullptr);
  EXPECT_FALSE(b3->spearman.has_value());
  EXPECT_FALSE(b3->note.empty());
  auto round = EvalReport::from_json(rep.to_json());
  EXPECT_EQ(round.to_json().dump(), rep.to_json().dump());
}

TEST_F(EvalFixture, ReportFileRoundTrip) {
  TempDir dir;
  auto rep = eval_dms(bundle.dataset, bundle.levels[2]);
  write_report(rep, dir / "r.json");
  EXPECT_EQ(read_report(dir / "r.json").to_json().dump(), rep.to_json().dump());
  detail::write_text(dir / "bad.json", "{\"dataset\": 1}");
  EXPECT_THROW(read_report(dir / "bad.json"), InputError);
}

EvalReport fake(const std::string& model, const std::string& ds, std::optional<double> rho1,
                std::optional<double> rho2 = std::nullopt, std::uint64_t seed = 0) {
  EvalReport r;
  r.dataset = ds;
  r.model_tag = model;
  r.split_seed = seed;
  r.buckets.push_back({1, 80, 20, rho1, ""});
  r.buckets.push_back({2, 0, 20, rho2, ""});
  return r;
}

TEST(Compare, WinRatesAreStrictAndSkipUndefined) {
  std::vector<EvalReport> reps;
  // 14 datasets where both are defined: a wins 13; one where b is undefined.
  for (int i = 0; i < 14; ++i) {
    const auto ds = "d" + std::to_string(i);
    reps.push_back(fake("a", ds, i == 0 ? 0.1 : 0.6));
    reps.push_back(fake("b", ds, 0.5));
  }
  reps.push_back(fake("a", "d14", 0.9));
  reps.push_back(fake("b", "d14", std::nullopt));
  auto t = compare_models(reps);
  ASSERT_EQ(t.models, (std::vector<std::string>{"a", "b"}));
  EXPECT_DOUBLE_EQ(*t.win_rate[0][0][1], 100.0 * 13 / 14);
  EXPECT_DOUBLE_EQ(*t.win_rate[0][1][0], 100.0 * 1 / 14);
  EXPECT_EQ(t.compared[0][1], 14u);
  EXPECT_EQ(format_win_rate(*t.win_rate[0][0][1]), "92.86%");
  EXPECT_NE(render_win_table(t).find("92.86%"), std::string::npos);
  // Bucket 2 is undefined everywhere.
  EXPECT_FALSE(t.win_rate[1][0][1].has_value());
  EXPECT_FALSE(t.mean[1][0].has_value());
}

TEST(Compare, TiesCountForNeither) {
  std::vector<EvalReport> reps{fake("a", "x", 0.5), fake("b", "x", 0.5), fake("a", "y", 0.2), fake("b", "y", 0.2)};
  auto t = compare_models(reps);
  EXPECT_EQ(*t.win_rate[0][0][1], 0.0);
  EXPECT_EQ(*t.win_rate[0][1][0], 0.0);
}

TEST(Compare, MeanAndPopulationStd) {
  std::vector<EvalReport> reps{fake("a", "x", 0.8), fake("a", "y", 0.9), fake("a", "z", std::nullopt)};
  auto t = compare_models(reps);
  EXPECT_NEAR(*t.mean[0][0], 0.85, 1e-15);
  EXPECT_NEAR(*t.stddev[0][0], 0.05, 1e-15);
  EXPECT_EQ(t.defined[0][0], 2u);
  EXPECT_EQ(format_mean_std(0.879, 0.04), "0.879 (± 0.040)");
  EXPECT_NE(render_mean_table(t).find("0.850 (± 0.050)"), std::string::npos);
}

TEST(Compare, RejectsInconsistentInputs) {
  EXPECT_NE(error_of([] { compare_models({fake("a", "x", 0.1), fake("b", "y", 0.1)}); }).find("missing report"),
            std::string::npos);
  EXPECT_NE(error_of([] { compare_models({fake("a", "x", 0.1), fake("a", "x", 0.2)}); }).find("duplicate"),
            std::string::npos);
  EXPECT_NE(error_of([] { compare_models({fake("a", "x", 0.1), fake("b", "x", 0.2, {}, 1)}); }).find("split seeds"),
            std::string::npos);
  EXPECT_THROW(compare_models({}), InputError);
}

TEST(Parallel, OutputOrderIndependentOfJobs) {
  std::vector<double> one(37), four(37);
  parallel_for(one.size(), 1, [&](std::size_t i) { one[i] = std::sqrt(static_cast<double>(i)); });
  parallel_for(four.size(), 4, [&](std::size_t i) { four[i] = std::sqrt(static_cast<double>(i)); });
  EXPECT_EQ(one, four);
  EXPECT_THROW(parallel_for(8, 3, [](std::size_t i) {
                 if (i == 5) throw InputError("boom");
               }),
               InputError);
}

TEST(Probe, PerSequenceLabelLinearInPooledEmbedding) {
  Rng rng(8);
  EmbeddingSet set("m", 4);
  std::vector<LabelRow> labels;
  const VectorXd w = rng.gaussian_matrix(4, 1);
  for (int i = 0; i < 60; ++i) {
    const MatrixXd x = rng.gaussian_matrix(5, 4);
    const auto id = "s" + std::to_string(i);
    set.add(make_embedding(id, x));
    const auto stored = set.at(id).values.cast<double>();
    labels.push_back({id, std::nullopt, stored.colwise().mean().dot(w.transpose())});
  }
  auto rep = eval_probe(labels, set);
  EXPECT_EQ(rep.granularity, "sequence");
  EXPECT_EQ(rep.n_train, 48u);
  EXPECT_GE(*rep.spearman, 0.95);
}

TEST(Probe, PerResidueSplitKeepsSequencesTogether) {
  TempDir dir;
  Rng rng(9);
  EmbeddingSet set("m", 3);
  std::string csv = "seq_id,position,label\n";
  for (int i = 0; i < 10; ++i) {
    const auto id = "s" + std::to_string(i);
    set.add(make_embedding(id, rng.gaussian_matrix(6, 3)));
    for (int p = 1; p <= 6; ++p) csv += id + "," + std::to_string(p) + "," + std::to_string(set.at(id).values(p - 1, 0)) + "\n";
  }
  detail::write_text(dir / "labels.csv", csv);
  auto labels = read_label_csv(dir / "labels.csv");
  ASSERT_EQ(labels.size(), 60u);
  EXPECT_EQ(*labels[1].position, 1);
  auto rep = eval_probe(labels, set);
  EXPECT_EQ(rep.granularity, "residue");
  EXPECT_EQ(rep.n_train, 48u);  // 8 whole sequences
  EXPECT_EQ(rep.n_test, 12u);
  EXPECT_GE(*rep.spearman, 0.99);
  labels[3].position.reset();
  EXPECT_THROW(eval_probe(labels, set), InputError);
}

}  // namespace
}  // namespace rdistill
