#include <gtest/gtest.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>

#include "oracles.hpp"
#include "support.hpp"

using namespace supcbm;
using testing_support::TempDir;

namespace {

EmbeddingMatrix sample_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EmbeddingMatrix m{Matrix(n, d), {}, EmbeddingKind::image};
  for (double& v : m.values.flat()) v = static_cast<float>(std::uniform_real_distribution<double>(-2, 2)(rng));
  for (std::size_t i = 0; i < n; ++i) m.ids.push_back("img" + std::to_string(i));
  return m;
}

nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream(p, std::ios::trunc) << j.dump(2);
}

}  // namespace

TEST(Cosine, MatchesOracleAndRejectsDegenerateInput) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    auto u = oracle::random_vector(rng, 17), v = oracle::random_vector(rng, 17);
    EXPECT_NEAR(cosine(u, v), oracle::cosine(u, v), 1e-14);
  }
  std::vector<double> a{1, 2}, z{0, 0}, b{1, 2, 3};
  EXPECT_THROW(cosine(a, z), UsageError);
  EXPECT_THROW(cosine(a, b), UsageError);
}

TEST(EmbeddingStore, RoundTripIsExactForFloat32Values) {
  TempDir dir("emb");
  const auto m = sample_matrix(13, 7, 4);
  save_embeddings(dir / "x.json", m);
  EXPECT_EQ(load_embeddings(dir / "x.json"), m);
  EXPECT_TRUE(std::filesystem::exists(dir / "x.bin"));
}

TEST(EmbeddingStore, DatasetRoundTrip) {
  TempDir dir("ds");
  LabeledDataset ds{sample_matrix(5, 3, 8), {0, 1, 2, 1, 0}, Split::dev};
  save_dataset(dir / "dev.json", ds);
  EXPECT_EQ(load_dataset(dir / "dev.json"), ds);
  auto any = load_embeddings_any(dir / "dev.json");
  ASSERT_TRUE(any.split.has_value());
  EXPECT_EQ(*any.split, Split::dev);
}

TEST(EmbeddingStore, ConceptKindRoundTrip) {
  TempDir dir("ck");
  auto m = sample_matrix(4, 3, 2);
  m.kind = EmbeddingKind::concept_text;
  save_embeddings(dir / "c.json", m);
  EXPECT_EQ(read_json(dir / "c.json")["kind"], "concept-text");
  EXPECT_EQ(load_embeddings(dir / "c.json").kind, EmbeddingKind::concept_text);
  EXPECT_THROW(load_dataset(dir / "c.json"), DataError);
}

TEST(EmbeddingStore, ManifestFields) {
  TempDir dir("mf");
  save_embeddings(dir / "x.json", sample_matrix(2, 3, 1));
  const auto j = read_json(dir / "x.json");
  EXPECT_EQ(j["version"], 1);
  EXPECT_EQ(j["n"], 2);
  EXPECT_EQ(j["d"], 3);
  EXPECT_EQ(j["dtype"], "f32le");
  EXPECT_EQ(j["blob"], "x.bin");
  EXPECT_EQ(j["sha256"].get<std::string>().size(), 64u);
}

TEST(EmbeddingStore, BlobIsLittleEndianFloat32) {
  TempDir dir("le");
  EmbeddingMatrix m{Matrix(1, 2), {"a"}, EmbeddingKind::image};
  m.values(0, 0) = 1.0;
  m.values(0, 1) = -2.5;
  save_embeddings(dir / "x.json", m);
  const auto bytes = detail::read_file(dir / "x.bin");
  const std::vector<std::uint8_t> expected{0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0};
  EXPECT_EQ(bytes, expected);
}

TEST(EmbeddingStore, RejectsVersionMismatch) {
  TempDir dir("ver");
  save_embeddings(dir / "x.json", sample_matrix(2, 2, 1));
  auto j = read_json(dir / "x.json");
  j["version"] = 2;
  write_json(dir / "x.json", j);
  try {
    load_embeddings(dir / "x.json");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version mismatch"), std::string::npos);
  }
}

TEST(EmbeddingStore, RejectsTruncatedBlob) {
  TempDir dir("trunc");
  save_embeddings(dir / "x.json", sample_matrix(3, 2, 1));
  auto bytes = detail::read_file(dir / "x.bin");
  bytes.resize(bytes.size() - 4);
  detail::write_file(dir / "x.bin", bytes);
  try {
    load_embeddings(dir / "x.json");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("size mismatch"), std::string::npos);
  }
}

TEST(EmbeddingStore, RejectsChecksumMismatchAndNonFinite) {
  TempDir dir("nan");
  auto m = sample_matrix(2, 2, 1);
  save_embeddings(dir / "x.json", m);
  auto bytes = detail::read_file(dir / "x.bin");
  bytes[0] ^= 1;
  detail::write_file(dir / "x.bin", bytes);
  EXPECT_THROW(load_embeddings(dir / "x.json"), DataError);

  m.values(1, 1) = std::numeric_limits<double>::quiet_NaN();
  save_embeddings(dir / "y.json", m);
  try {
    load_embeddings(dir / "y.json");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(EmbeddingStore, RejectsMissingFilesAndBadDtype) {
  TempDir dir("miss");
  EXPECT_THROW(load_embeddings(dir / "nope.json"), DataError);
  save_embeddings(dir / "x.json", sample_matrix(2, 2, 1));
  auto j = read_json(dir / "x.json");
  j["dtype"] = "f16";
  write_json(dir / "x.json", j);
  EXPECT_THROW(load_embeddings(dir / "x.json"), DataError);
}
