#include <gtest/gtest.h>
#include <json.hpp>

#include <fstream>
#include <limits>

#include "oracles.hpp"
#include "support.hpp"

using namespace supcbm;
using namespace testing_support;

namespace {

struct Problem {
  CBLayer layer;
  InterventionMatrix matrix;
  std::vector<double> x, gt;
  std::size_t y = 0;
};

Problem random_problem(std::mt19937_64& rng, std::size_t d, std::size_t M, std::size_t L) {
  Problem p;
  p.layer = CBLayer::initialize(M, d, rng);
  p.matrix = random_matrix(rng, M, L);
  p.x = oracle::random_vector(rng, d);
  p.gt = binary_vector(rng, M);
  p.y = rng() % L;
  return p;
}

double oracle_loss(const Problem& p, const std::vector<double>& params, double alpha) {
  const auto layer = unpack(params, p.layer.num_concepts(), p.layer.dim());
  const auto c = oracle::forward(rows_of(layer.weights), layer.bias, p.x);
  return oracle::objective(c, p.gt, oracle::class_scores(c, column_sets(p.matrix)), p.y, alpha);
}

std::vector<double> pack_grad(const CBGradient& g) {
  std::vector<double> out(g.weights.flat().begin(), g.weights.flat().end());
  out.insert(out.end(), g.bias.begin(), g.bias.end());
  return out;
}

}  // namespace

TEST(Forward, MatchesOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    auto p = random_problem(rng, 9, 12, 4);
    const auto c = forward(p.layer, p.x);
    const auto want = oracle::forward(rows_of(p.layer.weights), p.layer.bias, p.x);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], want[i], 1e-15);
  }
  CBLayer layer{Matrix(2, 3), {0, 0}};
  std::vector<double> wrong(4, 1.0);
  EXPECT_THROW(forward(layer, wrong), UsageError);
}

TEST(LabelScores, EqualsSetSum) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto m = random_matrix(rng, 15, 5);
    const auto c = oracle::random_vector(rng, 15, 0, 1);
    EXPECT_EQ(label_scores(c, m), oracle::class_scores(c, column_sets(m)));
  }
}

TEST(Argmax, LowestIndexWinsAndTiesReported) {
  std::vector<double> l{1.0, 3.0, 3.0, 2.0};
  const auto r = argmax(l);
  EXPECT_EQ(r.index, 1u);
  EXPECT_EQ(r.tied, (std::vector<std::size_t>{1, 2}));
  EXPECT_TRUE(r.ambiguous());
  std::vector<double> single{0.5};
  EXPECT_FALSE(argmax(single).ambiguous());
}

TEST(Loss, MatchesOracleAndAlphaEndpoints) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    auto p = random_problem(rng, 6, 8, 3);
    const auto c = forward(p.layer, p.x);
    const auto l = label_scores(c, p.matrix);
    for (double alpha : {0.0, 0.3, 0.7, 1.0})
      EXPECT_NEAR(loss(c, p.gt, l, p.y, alpha), oracle_loss(p, pack(p.layer), alpha), 1e-12);
  }
}

TEST(Loss, ClampKeepsSaturatedProbabilitiesFinite) {
  std::vector<double> c{0.0, 1.0}, gt{1.0, 0.0};
  EXPECT_NEAR(bce_mean(c, gt), -std::log(1e-12), 1e-9);
}

TEST(Grad, MatchesCentralDifferences) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 30; ++t) {
    const std::size_t d = 2 + t % 10, M = 2 + t % 13, L = 1 + t % 5;
    auto p = random_problem(rng, d, M, L);
    for (double alpha : {0.0, 0.7, 1.0}) {
      const auto analytic = pack_grad(grad(p.layer, p.x, p.gt, p.y, p.matrix, alpha));
      const auto numeric =
          oracle::central_differences(pack(p.layer), [&](const auto& params) { return oracle_loss(p, params, alpha); });
      EXPECT_LT(oracle::max_relative_error(analytic, numeric), 1e-4) << "d=" << d << " M=" << M << " L=" << L;
    }
  }
}

TEST(Grad, FcAblationMatchesCentralDifferences) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 3 + t % 5, M = 2 + t % 7, L = 2 + t % 3;
    FcModel model{CBLayer::initialize(M, d, rng), LinearHead::initialize(L, M, rng)};
    for (double& b : model.head.bias) b = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    const auto x = oracle::random_vector(rng, d);
    const auto gt = binary_vector(rng, M);
    const std::size_t y = rng() % L;
    const auto g = fc_grad(model, x, gt, y, 0.7);

    std::vector<double> params = pack(model.layer);
    params.insert(params.end(), model.head.weights.flat().begin(), model.head.weights.flat().end());
    params.insert(params.end(), model.head.bias.begin(), model.head.bias.end());
    auto f = [&](const std::vector<double>& ps) {
      FcModel m = model;
      m.layer = unpack({ps.begin(), ps.begin() + static_cast<std::ptrdiff_t>(M * d + M)}, M, d);
      std::copy(ps.begin() + static_cast<std::ptrdiff_t>(M * d + M), ps.begin() + static_cast<std::ptrdiff_t>(M * d + M + L * M),
                m.head.weights.flat().begin());
      std::copy(ps.end() - static_cast<std::ptrdiff_t>(L), ps.end(), m.head.bias.begin());
      return fc_loss(m, x, gt, y, 0.7);
    };
    std::vector<double> analytic = pack_grad(g.layer);
    analytic.insert(analytic.end(), g.head.weights.flat().begin(), g.head.weights.flat().end());
    analytic.insert(analytic.end(), g.head.bias.begin(), g.head.bias.end());
    EXPECT_LT(oracle::max_relative_error(analytic, oracle::central_differences(params, f)), 1e-4);
  }
}

TEST(Grad, HeadMatchesCentralDifferences) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    const std::size_t U = 2 + t % 9, L = 2 + t % 4;
    auto head = LinearHead::initialize(L, U, rng);
    const auto u = oracle::random_vector(rng, U);
    const std::size_t y = rng() % L;
    const auto g = head_grad(head, u, y);
    std::vector<double> params(head.weights.flat().begin(), head.weights.flat().end());
    params.insert(params.end(), head.bias.begin(), head.bias.end());
    auto f = [&](const std::vector<double>& ps) {
      LinearHead h = head;
      std::copy(ps.begin(), ps.begin() + static_cast<std::ptrdiff_t>(L * U), h.weights.flat().begin());
      std::copy(ps.begin() + static_cast<std::ptrdiff_t>(L * U), ps.end(), h.bias.begin());
      return cross_entropy(h(u), y);
    };
    std::vector<double> analytic(g.weights.flat().begin(), g.weights.flat().end());
    analytic.insert(analytic.end(), g.bias.begin(), g.bias.end());
    EXPECT_LT(oracle::max_relative_error(analytic, oracle::central_differences(params, f)), 1e-4);
  }
}

TEST(Predict, IdenticalColumnsTie) {
  std::mt19937_64 rng(7);
  auto m = random_matrix(rng, 10, 3);
  for (std::size_t i = 0; i < 10; ++i) m.set(i, 2, m(i, 1));
  m.set(0, 1, true);
  m.set(0, 2, true);
  SupCbmModel model{CBLayer::initialize(10, 4, rng), m};
  const auto x = oracle::random_vector(rng, 4);
  const auto r = predict(model, x);
  EXPECT_EQ(r.l[1], r.l[2]);
  if (r.predicted == 1 || r.predicted == 2) {
    EXPECT_TRUE(r.ambiguous());
    EXPECT_EQ(r.predicted, 1u);
  }
}

namespace {

struct SmallRun {
  SyntheticFixture fx;
  AnnotationSet ann;
  TrainConfig cfg;
};

SmallRun small_run() {
  SyntheticConfig sc;
  sc.num_classes = 4;
  sc.p = 3;
  sc.q = 4;
  sc.dim = 32;
  sc.images_per_class = 40;
  SmallRun r{gen_synthetic(sc), {}, {}};
  r.ann = annotate_dataset(r.fx.train, r.fx.vocab, r.fx.matrix, r.fx.concepts, sc.k);
  r.cfg.epochs = 15;
  r.cfg.seed = 3;
  return r;
}

}  // namespace

TEST(Train, LearnsSmallFixtureAndLeavesMatrixAlone) {
  auto run = small_run();
  const auto before = run.fx.matrix;
  auto result = train(run.fx.train, run.ann, run.fx.matrix, run.cfg, &run.fx.dev);
  EXPECT_EQ(run.fx.matrix, before);
  ASSERT_EQ(result.metrics.size(), run.cfg.epochs);
  EXPECT_LT(result.metrics.back().train_loss, result.metrics.front().train_loss);
  ASSERT_TRUE(result.metrics.back().dev_accuracy.has_value());
  SupCbmModel model{result.model, run.fx.matrix};
  EXPECT_GE(accuracy(model, run.fx.test), 0.9);
}

TEST(Train, BitReproducible) {
  auto run = small_run();
  run.cfg.epochs = 3;
  const auto a = train(run.fx.train, run.ann, run.fx.matrix, run.cfg);
  const auto b = train(run.fx.train, run.ann, run.fx.matrix, run.cfg);
  EXPECT_EQ(a.model, b.model);
  run.cfg.seed = 4;
  const auto c = train(run.fx.train, run.ann, run.fx.matrix, run.cfg);
  EXPECT_NE(a.model, c.model);
}

TEST(Train, NonFiniteEmbeddingRaisesDivergence) {
  auto run = small_run();
  run.fx.train.embeddings.values(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train(run.fx.train, run.ann, run.fx.matrix, run.cfg), DivergenceError);
}

TEST(Train, RejectsBadConfigAndMisalignedAnnotations) {
  auto run = small_run();
  auto cfg = run.cfg;
  cfg.alpha = 1.5;
  EXPECT_THROW(train(run.fx.train, run.ann, run.fx.matrix, cfg), UsageError);
  cfg = run.cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(train(run.fx.train, run.ann, run.fx.matrix, cfg), UsageError);
  auto ann = run.ann;
  ann.items.pop_back();
  EXPECT_THROW(train(run.fx.train, ann, run.fx.matrix, run.cfg), DataError);
}

TEST(Baselines, TrainAndScore) {
  auto run = small_run();
  const std::size_t L = run.fx.vocab.num_classes();
  auto fc = train_fc_ablation(run.fx.train, run.ann, L, run.cfg);
  auto dummy = train_dummy(run.fx.train, L, run.cfg);
  auto proj = cbm_proj(run.fx.train, run.fx.concepts, L, run.cfg);
  EXPECT_GE(accuracy(fc.model, run.fx.test), 0.8);
  EXPECT_GE(accuracy(dummy.model, run.fx.test), 0.8);
  EXPECT_GE(accuracy(proj.model, run.fx.test), 0.8);
  EXPECT_EQ(dummy.model.num_units(), run.fx.train.embeddings.dim());
  EXPECT_EQ(proj.model.num_units(), run.fx.vocab.num_concepts());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ck");
  std::mt19937_64 rng(8);
  const auto layer = CBLayer::initialize(7, 5, rng);
  save_checkpoint(dir / "model.json", layer, {0.7, "abc", 42, 3});
  const auto ck = load_checkpoint(dir / "model.json");
  EXPECT_EQ(ck.layer, layer);
  EXPECT_EQ(ck.info.vocab_sha256, "abc");
  EXPECT_EQ(ck.info.seed, 42u);
  EXPECT_EQ(ck.info.num_classes, 3u);
}

TEST(Checkpoint, DetectsTampering) {
  TempDir dir("ckt");
  std::mt19937_64 rng(9);
  save_checkpoint(dir / "model.json", CBLayer::initialize(3, 2, rng), {0.7, "v", 1, 2});
  auto bytes = detail::read_file(dir / "model.W.f64");
  bytes[3] ^= 0x10;
  detail::write_file(dir / "model.W.f64", bytes);
  EXPECT_THROW(load_checkpoint(dir / "model.json"), DataError);

  save_checkpoint(dir / "m2.json", CBLayer::initialize(3, 2, rng), {0.7, "v", 1, 2});
  std::ifstream in(dir / "m2.json");
  auto j = nlohmann::json::parse(in);
  j["version"] = 9;
  std::ofstream(dir / "m2.json", std::ios::trunc) << j.dump();
  EXPECT_THROW(load_checkpoint(dir / "m2.json"), DataError);
}
