#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"

using namespace supcbm;

namespace {

std::vector<GroupScores> random_groups(std::mt19937_64& rng, bool with_ties) {
  std::uniform_int_distribution<std::size_t> ngroups(1, 6), gsize(1, 8), level(0, 3);
  std::uniform_real_distribution<double> sim(-1, 1);
  std::vector<GroupScores> out(ngroups(rng));
  std::size_t next_id = 0;
  for (auto& g : out) {
    const std::size_t n = gsize(rng);
    for (std::size_t t = 0; t < n; ++t) {
      g.ids.push_back(next_id);
      next_id += 1 + rng() % 3;
      g.similarities.push_back(with_ties ? 0.25 * static_cast<double>(level(rng)) : sim(rng));
    }
    std::shuffle(g.ids.begin(), g.ids.end(), rng);
  }
  return out;
}

std::vector<std::vector<std::pair<std::size_t, double>>> as_pairs(const std::vector<GroupScores>& groups) {
  std::vector<std::vector<std::pair<std::size_t, double>>> out;
  for (const auto& g : groups) {
    out.emplace_back();
    for (std::size_t t = 0; t < g.ids.size(); ++t) out.back().emplace_back(g.ids[t], g.similarities[t]);
  }
  return out;
}

}  // namespace

TEST(Pool, MatchesSortOracle) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 500; ++t) {
    const auto groups = random_groups(rng, t % 2 == 0);
    const std::size_t k = 1 + t % 5;
    const auto got = pool(groups, k);
    const auto want = oracle::pool_by_sort(as_pairs(groups), k);
    EXPECT_EQ(std::set<std::size_t>(got.begin(), got.end()), want);
    EXPECT_TRUE(std::is_sorted(got.begin(), got.end()));
  }
}

TEST(Pool, SelectionSizeIsSumOfMinKAndGroupSize) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto groups = random_groups(rng, false);
    const std::size_t k = 1 + t % 4;
    std::size_t expected = 0;
    for (const auto& g : groups) expected += std::min(k, g.ids.size());
    EXPECT_EQ(pool(groups, k).size(), expected);
  }
}

TEST(Pool, TiesGoToLowerId) {
  std::vector<GroupScores> g{{{9, 4, 7}, {0.5, 0.5, 0.5}}};
  EXPECT_EQ(pool(g, 1), std::vector<std::size_t>{4});
  EXPECT_EQ(pool(g, 2), (std::vector<std::size_t>{4, 7}));
}

TEST(Pool, ShortGroupAndSingleton) {
  std::vector<GroupScores> g{{{3}, {0.1}}, {{5, 6}, {0.9, -0.2}}};
  EXPECT_EQ(pool(g, 2), (std::vector<std::size_t>{3, 5, 6}));
  EXPECT_EQ(pool(g, 1), (std::vector<std::size_t>{3, 5}));
  EXPECT_THROW(pool(g, 0), UsageError);
}

TEST(Annotate, SelectedConceptsLieInTheLabelColumn) {
  SyntheticConfig cfg;
  cfg.num_classes = 4;
  cfg.images_per_class = 20;
  cfg.dim = 64;
  const auto fx = gen_synthetic(cfg);
  const auto ann = annotate_dataset(fx.train, fx.vocab, fx.matrix, fx.concepts, cfg.k);
  ASSERT_EQ(ann.size(), fx.train.size());
  for (std::size_t n = 0; n < ann.size(); ++n) {
    const auto& a = ann.items[n];
    EXPECT_EQ(a.label, fx.train.labels[n]);
    EXPECT_EQ(a.selected.size(), cfg.p * cfg.k);
    for (std::size_t id : a.selected) EXPECT_EQ(fx.matrix(id, a.label), 1);
    const auto dense = ann.dense(n);
    double ones = 0;
    for (double v : dense) ones += v;
    EXPECT_EQ(ones, static_cast<double>(a.selected.size()));
  }
}

TEST(Annotate, MatchesPerImageOracle) {
  SyntheticConfig cfg;
  cfg.num_classes = 3;
  cfg.images_per_class = 10;
  cfg.dim = 32;
  const auto fx = gen_synthetic(cfg);
  const auto ann = annotate_dataset(fx.test, fx.vocab, fx.matrix, fx.concepts, 3);
  for (std::size_t n = 0; n < fx.test.size(); ++n) {
    const auto x = fx.test.embeddings.row(n);
    const std::vector<double> xv(x.begin(), x.end());
    std::vector<std::vector<std::pair<std::size_t, double>>> groups;
    for (const auto& g : fx.vocab.groups[fx.test.labels[n]]) {
      groups.emplace_back();
      for (std::size_t id : g.ids) {
        const auto row = fx.concepts.row(id);
        groups.back().emplace_back(id, oracle::cosine(xv, {row.begin(), row.end()}));
      }
    }
    const auto want = oracle::pool_by_sort(groups, 3);
    EXPECT_EQ(std::set<std::size_t>(ann.items[n].selected.begin(), ann.items[n].selected.end()), want);
  }
}

TEST(Annotate, MissingConceptEmbeddingIsDataError) {
  SyntheticConfig cfg;
  cfg.num_classes = 2;
  cfg.images_per_class = 5;
  cfg.dim = 16;
  auto fx = gen_synthetic(cfg);
  EmbeddingMatrix short_concepts{Matrix(fx.concepts.size() - 1, fx.concepts.dim()), {}, EmbeddingKind::concept_text};
  EXPECT_THROW(annotate_dataset(fx.train, fx.vocab, fx.matrix, short_concepts, 2), DataError);
  EXPECT_THROW(annotate_dataset(fx.train, fx.vocab, fx.matrix, fx.concepts, 0), UsageError);
}

TEST(Annotate, JsonLinesRoundTrip) {
  testing_support::TempDir dir("ann");
  AnnotationSet set{10, {{"a", 0, {1, 3}}, {"b", 2, {0, 9}}}};
  save_annotations(dir / "ann.jsonl", set);
  EXPECT_EQ(load_annotations(dir / "ann.jsonl", 10), set);
  EXPECT_THROW(load_annotations(dir / "ann.jsonl", 5), DataError);
}
