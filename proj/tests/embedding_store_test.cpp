#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "rdistill/embedding_store.hpp"
#include "rdistill/random.hpp"
#include "support/temp_dir.hpp"

namespace rdistill {
namespace {

EmbeddingMatrix random_embedding(Rng& rng, const std::string& id, Eigen::Index n, Eigen::Index k) {
  return make_embedding(id, rng.gaussian_matrix(n, k));
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

TEST(Emb1, SingleValueFileLayout) {
  TempDir dir;
  EmbeddingMatrix m{"a", FloatMatrix::Zero(1, 1)};
  write_embedding(m, dir / "a.emb");
  // magic 4 + version 4 + id length 2 + id 1 + n 4 + k 4 + dtype 1 + payload 4
  EXPECT_EQ(std::filesystem::file_size(dir / "a.emb"), 24u);
  auto bytes = detail::read_file(dir / "a.emb");
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "EMB1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 1);   // id length, little-endian
  EXPECT_EQ(bytes[10], 'a');
  EXPECT_EQ(bytes[19], 1);  // dtype
  EXPECT_TRUE(bitwise_equal(read_embedding(dir / "a.emb"), m));
}

TEST(Emb1, RoundTripIsBitwiseForRandomMatrices) {
  TempDir dir;
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 1 + static_cast<Eigen::Index>(rng.below(6));
    const auto k = 1 + static_cast<Eigen::Index>(rng.below(6));
    auto m = random_embedding(rng, "seq_" + std::to_string(trial), n, k);
    if (trial == 0) m.values(0, 0) = -0.0f;
    write_embedding(m, dir / "m.emb");
    ASSERT_TRUE(bitwise_equal(read_embedding(dir / "m.emb"), m)) << "trial " << trial;
  }
}

TEST(Emb1, EncodingIsDeterministic) {
  Rng rng(7);
  auto m = random_embedding(rng, "x", 3, 4);
  EXPECT_EQ(encode_embedding(m), encode_embedding(m));
}

TEST(Emb1, RejectsNonFiniteValues) {
  TempDir dir;
  EmbeddingMatrix m{"a", FloatMatrix::Zero(2, 2)};
  m.values(1, 0) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_NE(error_of([&] { write_embedding(m, dir / "a.emb"); }).find("non-finite value"), std::string::npos);
}

TEST(Emb1, RejectsBadMagic) {
  TempDir dir;
  EmbeddingMatrix m{"a", FloatMatrix::Ones(2, 2)};
  auto bytes = encode_embedding(m);
  std::copy_n("XXXX", 4, bytes.begin());
  detail::write_file(dir / "bad.emb", bytes);
  EXPECT_NE(error_of([&] { read_embedding(dir / "bad.emb"); }).find("bad magic"), std::string::npos);
}

TEST(Emb1, RejectsVersionAndDtype) {
  EmbeddingMatrix m{"ab", FloatMatrix::Ones(2, 2)};
  auto bytes = encode_embedding(m);
  auto v2 = bytes;
  v2[4] = 2;
  EXPECT_NE(error_of([&] { decode_embedding(v2, "f"); }).find("version mismatch"), std::string::npos);
  auto dt = bytes;
  dt[4 + 4 + 2 + 2 + 8] = 2;
  EXPECT_NE(error_of([&] { decode_embedding(dt, "f"); }).find("dtype"), std::string::npos);
}

TEST(Emb1, CorruptedLengthFieldIsRejected) {
  Rng rng(99);
  EmbeddingMatrix m = random_embedding(rng, "seq", 5, 3);
  const auto good = encode_embedding(m);
  const std::size_t n_offset = 4 + 4 + 2 + 3;
  for (int trial = 0; trial < 50; ++trial) {
    auto bad = good;
    const auto byte = n_offset + rng.below(4);
    unsigned char replacement;
    do {
      replacement = static_cast<unsigned char>(rng.below(256));
    } while (replacement == static_cast<unsigned char>(bad[byte]));
    bad[byte] = static_cast<char>(replacement);
    EXPECT_THROW(decode_embedding(bad, "corrupt"), InputError) << "byte " << byte;
  }
  // Growing n must be reported as truncation specifically.
  auto grown = good;
  grown[n_offset] = 6;
  EXPECT_NE(error_of([&] { decode_embedding(grown, "f"); }).find("truncated"), std::string::npos);
}

TEST(Emb1, RejectsTruncatedHeader) {
  EmbeddingMatrix m{"abc", FloatMatrix::Ones(1, 1)};
  auto bytes = encode_embedding(m);
  bytes.resize(9);
  EXPECT_NE(error_of([&] { decode_embedding(bytes, "f"); }).find("truncated"), std::string::npos);
}

class ManifestTest : public ::testing::Test {
 protected:
  void write_set(const std::vector<std::pair<std::string, Eigen::Index>>& shapes, Eigen::Index file_k,
                 Eigen::Index manifest_dim) {
    Rng rng(3);
    Manifest m;
    m.model_tag = "small";
    m.dim = manifest_dim;
    std::size_t i = 0;
    for (const auto& [id, n] : shapes) {
      const auto name = embedding_file_name(i++, id);
      write_embedding(random_embedding(rng, id, n, file_k), dir / name);
      m.entries.push_back({id, name, n});
    }
    write_manifest(m, dir / "manifest.json");
  }
  TempDir dir;
};

TEST_F(ManifestTest, LoadsInManifestOrder) {
  write_set({{"b", 2}, {"a", 3}}, 4, 4);
  auto set = load_set(dir / "manifest.json");
  EXPECT_EQ(set.size(), 2u);
  EXPECT_EQ(set.k(), 4);
  EXPECT_EQ(set.model_tag(), "small");
  EXPECT_EQ(set.entries()[0].seq_id, "b");
  EXPECT_EQ(set.entries()[1].seq_id, "a");
}

TEST_F(ManifestTest, DimMismatchNamesSequence) {
  write_set({{"a", 2}, {"offender", 3}}, 5, 4);
  const auto msg = error_of([&] { load_set(dir / "manifest.json"); });
  EXPECT_NE(msg.find("'a'"), std::string::npos);
}

TEST_F(ManifestTest, DuplicateSeqIdRejected) {
  write_set({{"a", 2}, {"a", 2}}, 4, 4);
  EXPECT_NE(error_of([&] { load_set(dir / "manifest.json"); }).find("duplicate"), std::string::npos);
}

TEST_F(ManifestTest, MissingFileRejected) {
  write_set({{"a", 2}}, 4, 4);
  std::filesystem::remove(dir / embedding_file_name(0, "a"));
  EXPECT_NE(error_of([&] { load_set(dir / "manifest.json"); }).find("missing file"), std::string::npos);
}

TEST_F(ManifestTest, MissingManifestNamesPath) {
  EXPECT_NE(error_of([&] { load_set(dir / "nope.json"); }).find("nope.json"), std::string::npos);
}

TEST_F(ManifestTest, SetDirectoryResolvesToItsManifest) {
  write_set({{"b", 2}, {"a", 3}}, 4, 4);
  EXPECT_EQ(load_set(dir.path()).size(), 2u);
  EXPECT_EQ(read_manifest(dir.path()).model_tag, "small");
}

TEST(ReadFile, DirectoryIsAnInputError) {
  TempDir dir;
  EXPECT_THROW(detail::read_file(dir.path()), InputError);
}

TEST(EmbeddingSet, SaveLoadRoundTrip) {
  TempDir dir;
  Rng rng(5);
  EmbeddingSet set("m", 3);
  set.add(random_embedding(rng, "x/1", 4, 3));
  set.add(random_embedding(rng, "y", 1, 3));
  save_set(set, dir / "out");
  auto loaded = load_set(dir / "out" / "manifest.json");
  ASSERT_EQ(loaded.size(), 2u);
  for (std::size_t i = 0; i < set.size(); ++i)
    EXPECT_TRUE(bitwise_equal(loaded.entries()[i], set.entries()[i]));
}

TEST(Stack, TwoSequencesOffsets) {
  Rng rng(1);
  EmbeddingSet set("m", 4);
  set.add(random_embedding(rng, "a", 2, 4));
  set.add(random_embedding(rng, "b", 3, 4));
  auto st = stack(set);
  EXPECT_EQ(st.total_rows(), 5);
  ASSERT_EQ(st.offsets.size(), 2u);
  EXPECT_EQ(st.offsets[0], (RowSpan{"a", 0, 2}));
  EXPECT_EQ(st.offsets[1], (RowSpan{"b", 2, 3}));
}

TEST(Stack, SingleSequenceIsIdentity) {
  Rng rng(2);
  EmbeddingSet set("m", 3);
  set.add(random_embedding(rng, "a", 4, 3));
  auto st = stack(set);
  EXPECT_TRUE(st.values == set.entries()[0].values.cast<double>());
}

TEST(Stack, EmptySetRejected) {
  EmbeddingSet set("m", 3);
  EXPECT_THROW(stack(set), InputError);
}

TEST(Stack, UnstackRoundTripAndOrderStability) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto count = 1 + rng.below(8);
    std::vector<EmbeddingMatrix> entries;
    Eigen::Index expected_rows = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const auto n = 1 + static_cast<Eigen::Index>(rng.below(7));
      expected_rows += n;
      entries.push_back(random_embedding(rng, "s" + std::to_string(i), n, 5));
    }
    EmbeddingSet forward("m", 5), reversed("m", 5);
    for (const auto& e : entries) forward.add(e);
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) reversed.add(*it);

    auto st = stack(forward);
    ASSERT_EQ(st.total_rows(), expected_rows);
    auto back = unstack(st, "m");
    for (std::size_t i = 0; i < count; ++i) ASSERT_TRUE(bitwise_equal(back.entries()[i], entries[i]));

    // Permuting the set permutes row blocks identically.
    auto rs = stack(reversed);
    for (const auto& span : st.offsets) {
      auto match = std::find_if(rs.offsets.begin(), rs.offsets.end(),
                                [&](const RowSpan& r) { return r.seq_id == span.seq_id; });
      ASSERT_NE(match, rs.offsets.end());
      ASSERT_EQ(match->row_count, span.row_count);
      ASSERT_TRUE(rs.values.middleRows(match->row_start, match->row_count) ==
                  st.values.middleRows(span.row_start, span.row_count));
    }
  }
}

TEST(Alignment, IdenticalStructureIsAligned) {
  Rng rng(4);
  EmbeddingSet a("s", 2), b("l", 5);
  a.add(random_embedding(rng, "x", 3, 2));
  b.add(random_embedding(rng, "x", 3, 5));
  EXPECT_TRUE(validate_aligned(a, b).aligned);
}

TEST(Alignment, LengthMismatchListed) {
  Rng rng(4);
  EmbeddingSet a("s", 2), b("l", 5);
  a.add(random_embedding(rng, "x", 3, 2));
  a.add(random_embedding(rng, "y", 2, 2));
  b.add(random_embedding(rng, "x", 3, 5));
  b.add(random_embedding(rng, "y", 4, 5));
  auto rep = validate_aligned(a, b);
  EXPECT_FALSE(rep.aligned);
  EXPECT_EQ(rep.length_mismatch, std::vector<std::string>{"y"});
}

TEST(Alignment, DisjointIds) {
  Rng rng(4);
  EmbeddingSet a("s", 2), b("l", 5);
  a.add(random_embedding(rng, "x", 3, 2));
  b.add(random_embedding(rng, "z", 3, 5));
  auto rep = validate_aligned(a, b);
  EXPECT_FALSE(rep.aligned);
  EXPECT_TRUE(rep.common.empty());
}

TEST(Hierarchy, RejectsNonIncreasingDims) {
  EXPECT_THROW(ModelHierarchy({{"a", 8}, {"b", 8}}), InputError);
  EXPECT_THROW(ModelHierarchy({{"a", 8}, {"a", 16}}), InputError);
  EXPECT_NO_THROW(ModelHierarchy({{"a", 8}, {"b", 16}}));
}

}  // namespace
}  // namespace rdistill
