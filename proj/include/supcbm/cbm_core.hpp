#pragma once

// Concept bottleneck layer and its training objective.
//
//   c = sigmoid(W x + b)                  concept probabilities, M of them
//   l = c I                               class scores through the fixed 0/1 matrix
//   loss = alpha * meanBCE(c, GT_c) + (1 - alpha) * CE(softmax(l), y)
//
// No label predictor is learned: I is never touched by training. The
// baselines used by the leakage benchmark (learned dense head, plain softmax
// regression, projection onto concept similarities) live here too so they
// share the optimizer and the deterministic training loop.

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "supcbm/annotator.hpp"
#include "supcbm/concept_vocabulary.hpp"
#include "supcbm/embedding_store.hpp"
#include "supcbm/error.hpp"
#include "supcbm/linalg.hpp"

namespace supcbm {

inline constexpr double kLogClamp = 1e-12;
inline constexpr double kDefaultAlpha = 0.7;

struct TrainConfig {
  double alpha = kDefaultAlpha;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
    if (batch_size == 0) throw UsageError("batch size must be at least 1");
    if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw UsageError("Adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw UsageError("Adam epsilon must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},     {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
          {"beta2", c.beta2},     {"epsilon", c.epsilon},             {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"seed", c.seed}};
}

/// The trainable d -> M bottleneck.
struct CBLayer {
  Matrix weights;  // M x d
  std::vector<double> bias;

  std::size_t num_concepts() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }

  /// W, b ~ U(-1/sqrt(d), 1/sqrt(d)).
  static CBLayer initialize(std::size_t concepts, std::size_t dim, std::mt19937_64& rng) {
    if (dim == 0) throw UsageError("CBLayer: embedding dimension must be positive");
    CBLayer layer{Matrix(concepts, dim), std::vector<double>(concepts)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& w : layer.weights.flat()) w = u(rng);
    for (double& b : layer.bias) b = u(rng);
    return layer;
  }

  bool operator==(const CBLayer&) const = default;
};

inline std::vector<double> forward(const CBLayer& layer, std::span<const double> x) {
  if (x.size() != layer.dim())
    throw UsageError("forward: embedding has dimension " + std::to_string(x.size()) + ", layer expects " +
                     std::to_string(layer.dim()));
  std::vector<double> c(layer.num_concepts());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = sigmoid(dot(layer.weights.row(i), x) + layer.bias[i]);
  return c;
}

/// l_j = sum_i c_i * I(i, j), i ascending.
inline std::vector<double> label_scores(std::span<const double> c, const InterventionMatrix& matrix) {
  if (c.size() != matrix.rows()) throw UsageError("label_scores: concept vector does not match matrix rows");
  std::vector<double> l(matrix.cols(), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = 0; j < l.size(); ++j) l[j] += c[i] * matrix(i, j);
  return l;
}

struct ArgmaxResult {
  std::size_t index = 0;           // lowest index among the maxima
  std::vector<std::size_t> tied;   // every index attaining the maximum
  bool ambiguous() const { return tied.size() > 1; }
};

inline ArgmaxResult argmax(std::span<const double> l) {
  if (l.empty()) throw UsageError("argmax: empty score vector");
  ArgmaxResult r;
  const double best = *std::max_element(l.begin(), l.end());
  for (std::size_t j = 0; j < l.size(); ++j)
    if (l[j] == best) r.tied.push_back(j);
  r.index = r.tied.front();
  return r;
}

namespace detail {

inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> z) {
  const double lse = log_sum_exp(z);
  std::vector<double> p(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) p[j] = std::exp(z[j] - lse);
  return p;
}

}  // namespace detail

inline double bce_mean(std::span<const double> c, std::span<const double> gt_c) {
  if (c.size() != gt_c.size()) throw UsageError("bce: length mismatch");
  if (c.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i)
    s -= gt_c[i] * std::log(std::max(c[i], kLogClamp)) + (1.0 - gt_c[i]) * std::log(std::max(1.0 - c[i], kLogClamp));
  return s / static_cast<double>(c.size());
}

inline double cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw UsageError("cross_entropy: label out of range");
  return detail::log_sum_exp(logits) - logits[label];
}

inline double loss(std::span<const double> c, std::span<const double> gt_c, std::span<const double> l,
                   std::size_t gt_l, double alpha) {
  return alpha * bce_mean(c, gt_c) + (1.0 - alpha) * cross_entropy(l, gt_l);
}

struct CBGradient {
  Matrix weights;
  std::vector<double> bias;
};

namespace detail {

/// dLoss/dz for z = W x + b, given the forward activations. The BCE term
/// reduces to alpha (c - g) / M through the sigmoid.
inline std::vector<double> concept_logit_grad(std::span<const double> c, std::span<const double> gt_c,
                                              std::span<const double> dloss_dc_from_head, double alpha) {
  const double inv_m = 1.0 / static_cast<double>(c.size());
  std::vector<double> dz(c.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    dz[i] = alpha * (c[i] - gt_c[i]) * inv_m + c[i] * (1.0 - c[i]) * dloss_dc_from_head[i];
  return dz;
}

/// Back through l = c I with dLoss/dl = (1 - alpha)(softmax(l) - onehot(y)).
inline std::vector<double> matrix_head_backward(std::span<const double> l, std::size_t y,
                                                const InterventionMatrix& matrix, double alpha) {
  auto dl = softmax(l);
  dl[y] -= 1.0;
  std::vector<double> dc(matrix.rows(), 0.0);
  for (std::size_t i = 0; i < dc.size(); ++i)
    for (std::size_t j = 0; j < dl.size(); ++j)
      if (matrix(i, j)) dc[i] += (1.0 - alpha) * dl[j];
  return dc;
}

inline void add_outer(Matrix& acc, std::span<const double> dz, std::span<const double> x) {
  for (std::size_t i = 0; i < dz.size(); ++i) {
    if (dz[i] == 0.0) continue;
    auto row = acc.row(i);
    for (std::size_t k = 0; k < x.size(); ++k) row[k] += dz[i] * x[k];
  }
}

}  // namespace detail

/// Exact gradient of `loss` with respect to the layer's W and b.
inline CBGradient grad(const CBLayer& layer, std::span<const double> x, std::span<const double> gt_c,
                       std::size_t gt_l, const InterventionMatrix& matrix, double alpha) {
  const auto c = forward(layer, x);
  const auto l = label_scores(c, matrix);
  if (gt_l >= l.size()) throw UsageError("grad: label out of range");
  const auto dz = detail::concept_logit_grad(c, gt_c, detail::matrix_head_backward(l, gt_l, matrix, alpha), alpha);
  CBGradient g{Matrix(layer.num_concepts(), layer.dim()), dz};
  detail::add_outer(g.weights, dz, x);
  return g;
}

// ---------------------------------------------------------------------------
// Linear softmax head shared by the baselines

struct LinearHead {
  Matrix weights;  // classes x units
  std::vector<double> bias;

  static LinearHead initialize(std::size_t classes, std::size_t units, std::mt19937_64& rng) {
    LinearHead h{Matrix(classes, units), std::vector<double>(classes, 0.0)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(units, 1)));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& w : h.weights.flat()) w = u(rng);
    return h;
  }

  std::vector<double> operator()(std::span<const double> units) const {
    std::vector<double> z(weights.rows());
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = dot(weights.row(j), units) + bias[j];
    return z;
  }

  bool operator==(const LinearHead&) const = default;
};

struct HeadGradient {
  Matrix weights;
  std::vector<double> bias;
  std::vector<double> units;  // dLoss/dunits
};

/// Gradient of scale * CE(softmax(head(units)), y).
inline HeadGradient head_grad(const LinearHead& head, std::span<const double> units, std::size_t y,
                              double scale = 1.0) {
  auto dz = detail::softmax(head(units));
  if (y >= dz.size()) throw UsageError("head_grad: label out of range");
  dz[y] -= 1.0;
  HeadGradient g{Matrix(head.weights.rows(), head.weights.cols()), std::vector<double>(dz.size()),
                 std::vector<double>(units.size(), 0.0)};
  for (std::size_t j = 0; j < dz.size(); ++j) {
    const double d = scale * dz[j];
    g.bias[j] = d;
    auto wrow = head.weights.row(j);
    auto grow = g.weights.row(j);
    for (std::size_t i = 0; i < units.size(); ++i) {
      grow[i] = d * units[i];
      g.units[i] += d * wrow[i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Models. Each exposes per-unit activations, class scores computed from
// (possibly edited) activations, and each unit's contribution to a class
// score; the evaluator is written against that surface.

struct SupCbmModel {
  CBLayer layer;
  InterventionMatrix matrix;

  std::size_t num_units() const { return layer.num_concepts(); }
  std::size_t num_classes() const { return matrix.cols(); }
  std::vector<double> units(std::span<const double> x) const { return forward(layer, x); }
  std::vector<double> scores(std::span<const double> c) const { return label_scores(c, matrix); }
  double contribution(std::span<const double> c, std::size_t i, std::size_t j) const { return c[i] * matrix(i, j); }
};

/// Ablation: the fixed matrix replaced by a learned dense head.
struct FcModel {
  CBLayer layer;
  LinearHead head;

  std::size_t num_units() const { return layer.num_concepts(); }
  std::size_t num_classes() const { return head.weights.rows(); }
  std::vector<double> units(std::span<const double> x) const { return forward(layer, x); }
  std::vector<double> scores(std::span<const double> c) const { return head(c); }
  double contribution(std::span<const double> c, std::size_t i, std::size_t j) const {
    return std::abs(c[i] * head.weights(j, i));
  }
};

/// Softmax regression straight on the embedding; its input coordinates play
/// the role of concepts.
struct DummyModel {
  LinearHead head;

  std::size_t num_units() const { return head.weights.cols(); }
  std::size_t num_classes() const { return head.weights.rows(); }
  std::vector<double> units(std::span<const double> x) const {
    if (x.size() != num_units()) throw UsageError("dummy model: embedding dimension mismatch");
    return {x.begin(), x.end()};
  }
  std::vector<double> scores(std::span<const double> u) const { return head(u); }
  double contribution(std::span<const double> u, std::size_t i, std::size_t j) const {
    return std::abs(u[i] * head.weights(j, i));
  }
};

/// Softmax regression on the vector of image-to-concept cosine similarities.
struct ProjModel {
  Matrix concepts;  // M x d, unit rows
  LinearHead head;

  std::size_t num_units() const { return concepts.rows(); }
  std::size_t num_classes() const { return head.weights.rows(); }
  std::vector<double> units(std::span<const double> x) const {
    if (x.size() != concepts.cols()) throw UsageError("projection model: embedding dimension mismatch");
    const double nx = norm2(x);
    if (nx == 0.0) throw UsageError("projection model: zero-norm embedding");
    std::vector<double> s(concepts.rows());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = dot(concepts.row(i), x) / nx;
    return s;
  }
  std::vector<double> scores(std::span<const double> u) const { return head(u); }
  double contribution(std::span<const double> u, std::size_t i, std::size_t j) const {
    return std::abs(u[i] * head.weights(j, i));
  }
};

struct PredictionRecord {
  std::vector<double> c;
  std::vector<double> l;
  std::size_t predicted = 0;
  std::vector<std::size_t> ties;
  bool ambiguous() const { return ties.size() > 1; }
  bool operator==(const PredictionRecord&) const = default;
};

inline PredictionRecord make_record(std::vector<double> c, const InterventionMatrix& matrix) {
  PredictionRecord r;
  r.l = label_scores(c, matrix);
  r.c = std::move(c);
  auto am = argmax(r.l);
  r.predicted = am.index;
  r.ties = std::move(am.tied);
  return r;
}

inline PredictionRecord predict(const SupCbmModel& model, std::span<const double> x) {
  return make_record(forward(model.layer, x), model.matrix);
}

// ---------------------------------------------------------------------------
// Adam and the shared training loop

class Adam {
public:
  Adam(const TrainConfig& cfg, std::vector<std::size_t> sizes) : cfg_(cfg) {
    for (std::size_t n : sizes) {
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
  }

  /// One step over all parameter tensors, in slot order.
  void step(const std::vector<std::span<double>>& params, const std::vector<std::vector<double>>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t s = 0; s < params.size(); ++s) {
      auto& m = m_[s];
      auto& v = v_[s];
      for (std::size_t i = 0; i < params[s].size(); ++i) {
        const double g = grads[s][i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        params[s][i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
  }

private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> dev_accuracy;
};

template <class Model>
struct TrainResult {
  Model model;
  std::vector<EpochMetrics> metrics;
};

namespace detail {

/// Mini-batch loop. `sample(row, grads)` adds row's gradient into `grads`
/// (shaped like `params`) and returns its loss. Batches are visited in a
/// seeded shuffle order and reduced sequentially, so runs are bit-reproducible.
template <class SampleFn, class DevFn>
std::vector<EpochMetrics> fit(std::size_t rows, const TrainConfig& cfg, std::mt19937_64& rng,
                              const std::vector<std::span<double>>& params, SampleFn&& sample, DevFn&& dev_accuracy) {
  std::vector<std::size_t> sizes;
  for (auto p : params) sizes.push_back(p.size());
  Adam adam(cfg, sizes);
  std::vector<std::vector<double>> grads;
  for (std::size_t n : sizes) grads.emplace_back(n, 0.0);

  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;

  std::vector<EpochMetrics> metrics;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < rows; start += cfg.batch_size) {
      const std::size_t end = std::min(rows, start + cfg.batch_size);
      for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) batch_loss += sample(order[b], grads);
      if (!std::isfinite(batch_loss))
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                              std::to_string(start));
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads)
        for (double& v : g) v *= inv;
      adam.step(params, grads);
      epoch_loss += batch_loss;
    }
    metrics.push_back({epoch, rows ? epoch_loss / static_cast<double>(rows) : 0.0, dev_accuracy()});
  }
  return metrics;
}

inline void check_alignment(const LabeledDataset& data, const AnnotationSet& ann, std::size_t concepts) {
  if (ann.size() != data.size())
    throw DataError("annotations cover " + std::to_string(ann.size()) + " images, dataset has " + std::to_string(data.size()));
  if (ann.num_concepts != concepts) throw DataError("annotations were built for a different concept count");
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& a = ann.items[n];
    if (a.label != data.labels[n] || a.image_id != data.embeddings.ids.at(n))
      throw DataError("annotation " + std::to_string(n) + " (" + a.image_id + ") does not match dataset row");
  }
}

template <class Model>
std::optional<double> quick_accuracy(const Model& model, const LabeledDataset* dev) {
  if (!dev || dev->size() == 0) return std::nullopt;
  std::size_t hits = 0;
  for (std::size_t n = 0; n < dev->size(); ++n)
    hits += argmax(model.scores(model.units(dev->embeddings.row(n)))).index == dev->labels[n];
  return static_cast<double>(hits) / static_cast<double>(dev->size());
}

inline std::size_t infer_classes(const LabeledDataset& data) {
  std::size_t L = 0;
  for (std::size_t y : data.labels) L = std::max(L, y + 1);
  return L;
}

}  // namespace detail

/// Trains the bottleneck against the fixed matrix. `matrix` is read-only.
inline TrainResult<CBLayer> train(const LabeledDataset& data, const AnnotationSet& annotations,
                                  const InterventionMatrix& matrix, const TrainConfig& cfg,
                                  const LabeledDataset* dev = nullptr) {
  cfg.validate();
  const std::size_t M = matrix.rows();
  detail::check_alignment(data, annotations, M);
  for (std::size_t y : data.labels)
    if (y >= matrix.cols()) throw DataError("label " + std::to_string(y) + " outside the matrix's classes");

  std::mt19937_64 rng(cfg.seed);
  SupCbmModel model{CBLayer::initialize(M, data.embeddings.dim(), rng), matrix};
  std::vector<double> gt(M);
  auto sample = [&](std::size_t n, std::vector<std::vector<double>>& grads) {
    const auto x = data.embeddings.row(n);
    std::fill(gt.begin(), gt.end(), 0.0);
    for (std::size_t id : annotations.items[n].selected) gt[id] = 1.0;
    const auto c = forward(model.layer, x);
    const auto l = label_scores(c, model.matrix);
    const std::size_t y = data.labels[n];
    const auto dz = detail::concept_logit_grad(c, gt, detail::matrix_head_backward(l, y, model.matrix, cfg.alpha), cfg.alpha);
    const std::size_t d = x.size();
    for (std::size_t i = 0; i < M; ++i) {
      double* row = grads[0].data() + i * d;
      for (std::size_t k = 0; k < d; ++k) row[k] += dz[i] * x[k];
      grads[1][i] += dz[i];
    }
    return loss(c, gt, l, y, cfg.alpha);
  };
  auto metrics = detail::fit(data.size(), cfg, rng, {model.layer.weights.flat(), std::span<double>(model.layer.bias)},
                             sample, [&] { return detail::quick_accuracy(model, dev); });
  return {std::move(model.layer), std::move(metrics)};
}

/// Gradient of the ablation objective alpha*BCE(c) + (1-alpha)*CE(head(c)).
struct FcGradient {
  CBGradient layer;
  HeadGradient head;
};

inline FcGradient fc_grad(const FcModel& model, std::span<const double> x, std::span<const double> gt_c, std::size_t y,
                          double alpha) {
  const auto c = forward(model.layer, x);
  auto hg = head_grad(model.head, c, y, 1.0 - alpha);
  const auto dz = detail::concept_logit_grad(c, gt_c, hg.units, alpha);
  FcGradient g{{Matrix(model.layer.num_concepts(), model.layer.dim()), dz}, std::move(hg)};
  detail::add_outer(g.layer.weights, dz, x);
  return g;
}

inline double fc_loss(const FcModel& model, std::span<const double> x, std::span<const double> gt_c, std::size_t y,
                      double alpha) {
  const auto c = forward(model.layer, x);
  return alpha * bce_mean(c, gt_c) + (1.0 - alpha) * cross_entropy(model.head(c), y);
}

inline TrainResult<FcModel> train_fc_ablation(const LabeledDataset& data, const AnnotationSet& annotations,
                                              std::size_t num_classes, const TrainConfig& cfg,
                                              const LabeledDataset* dev = nullptr) {
  cfg.validate();
  const std::size_t M = annotations.num_concepts;
  detail::check_alignment(data, annotations, M);
  std::mt19937_64 rng(cfg.seed);
  FcModel model;
  model.layer = CBLayer::initialize(M, data.embeddings.dim(), rng);
  model.head = LinearHead::initialize(num_classes, M, rng);
  std::vector<double> gt(M);
  auto sample = [&](std::size_t n, std::vector<std::vector<double>>& grads) {
    std::fill(gt.begin(), gt.end(), 0.0);
    for (std::size_t id : annotations.items[n].selected) gt[id] = 1.0;
    const auto x = data.embeddings.row(n);
    const std::size_t y = data.labels[n];
    const auto c = forward(model.layer, x);
    const auto z = model.head(c);
    auto hg = head_grad(model.head, c, y, 1.0 - cfg.alpha);
    const auto dz = detail::concept_logit_grad(c, gt, hg.units, cfg.alpha);
    const std::size_t d = x.size();
    for (std::size_t i = 0; i < M; ++i) {
      double* row = grads[0].data() + i * d;
      for (std::size_t k = 0; k < d; ++k) row[k] += dz[i] * x[k];
      grads[1][i] += dz[i];
    }
    const auto hw = hg.weights.flat();
    for (std::size_t i = 0; i < hw.size(); ++i) grads[2][i] += hw[i];
    for (std::size_t j = 0; j < hg.bias.size(); ++j) grads[3][j] += hg.bias[j];
    return cfg.alpha * bce_mean(c, gt) + (1.0 - cfg.alpha) * cross_entropy(z, y);
  };
  auto metrics = detail::fit(data.size(), cfg, rng,
                             {model.layer.weights.flat(), std::span<double>(model.layer.bias), model.head.weights.flat(),
                              std::span<double>(model.head.bias)},
                             sample, [&] { return detail::quick_accuracy(model, dev); });
  return {std::move(model), std::move(metrics)};
}

namespace detail {

template <class Model>
std::vector<EpochMetrics> fit_head(Model& model, const LabeledDataset& data, const TrainConfig& cfg, std::mt19937_64& rng,
                                   const LabeledDataset* dev) {
  auto sample = [&](std::size_t n, std::vector<std::vector<double>>& grads) {
    const auto u = model.units(data.embeddings.row(n));
    const std::size_t y = data.labels[n];
    const auto hg = head_grad(model.head, u, y);
    const auto hw = hg.weights.flat();
    for (std::size_t i = 0; i < hw.size(); ++i) grads[0][i] += hw[i];
    for (std::size_t j = 0; j < hg.bias.size(); ++j) grads[1][j] += hg.bias[j];
    return cross_entropy(model.head(u), y);
  };
  return fit(data.size(), cfg, rng, {model.head.weights.flat(), std::span<double>(model.head.bias)}, sample,
             [&] { return quick_accuracy(model, dev); });
}

}  // namespace detail

inline TrainResult<DummyModel> train_dummy(const LabeledDataset& data, std::size_t num_classes, const TrainConfig& cfg,
                                           const LabeledDataset* dev = nullptr) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  DummyModel model{LinearHead::initialize(num_classes, data.embeddings.dim(), rng)};
  auto metrics = detail::fit_head(model, data, cfg, rng, dev);
  return {std::move(model), std::move(metrics)};
}

inline TrainResult<ProjModel> cbm_proj(const LabeledDataset& data, const EmbeddingMatrix& concept_embeddings,
                                       std::size_t num_classes, const TrainConfig& cfg,
                                       const LabeledDataset* dev = nullptr) {
  cfg.validate();
  if (concept_embeddings.dim() != data.embeddings.dim())
    throw DataError("cbm_proj: concept and image embeddings differ in dimension");
  std::mt19937_64 rng(cfg.seed);
  ProjModel model;
  model.concepts = concept_embeddings.values;
  for (std::size_t i = 0; i < model.concepts.rows(); ++i) {
    auto row = model.concepts.row(i);
    const double n = norm2(row);
    if (n == 0.0) throw DataError("cbm_proj: concept " + std::to_string(i) + " has a zero embedding");
    for (double& v : row) v /= n;
  }
  model.head = LinearHead::initialize(num_classes, model.concepts.rows(), rng);
  auto metrics = detail::fit_head(model, data, cfg, rng, dev);
  return {std::move(model), std::move(metrics)};
}

// ---------------------------------------------------------------------------
// Checkpoint: JSON manifest plus little-endian float64 blobs for W and b.

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointInfo {
  double alpha = kDefaultAlpha;
  std::string vocab_sha256;
  std::uint64_t seed = 0;
  std::size_t num_classes = 0;
};

namespace detail {

inline std::vector<std::uint8_t> encode_f64le(std::span<const double> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * 8);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

inline std::vector<double> decode_f64le(std::span<const std::uint8_t> bytes) {
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[8 * i + b]} << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& manifest, const CBLayer& layer, const CheckpointInfo& info) {
  auto wpath = manifest, bpath = manifest;
  wpath.replace_extension(".W.f64");
  bpath.replace_extension(".b.f64");
  const auto wbytes = detail::encode_f64le(layer.weights.flat());
  const auto bbytes = detail::encode_f64le(layer.bias);
  detail::write_file(wpath, wbytes);
  detail::write_file(bpath, bbytes);
  const nlohmann::json doc = {{"version", kCheckpointFormatVersion},
                              {"d", layer.dim()},
                              {"M", layer.num_concepts()},
                              {"L", info.num_classes},
                              {"alpha", info.alpha},
                              {"vocab_sha256", info.vocab_sha256},
                              {"seed", info.seed},
                              {"weights", wpath.filename().string()},
                              {"bias", bpath.filename().string()},
                              {"weights_sha256", sha256_hex(wbytes)},
                              {"bias_sha256", sha256_hex(bbytes)}};
  const std::string text = doc.dump(2) + "\n";
  detail::write_file(manifest, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

struct Checkpoint {
  CBLayer layer;
  CheckpointInfo info;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& manifest) {
  const auto text = detail::read_file(manifest);
  const std::string where = manifest.string() + ": ";
  try {
    const auto doc = nlohmann::json::parse(text.begin(), text.end());
    if (doc.at("version").get<int>() != kCheckpointFormatVersion)
      throw DataError(where + "version mismatch (found " + doc.at("version").dump() + ")");
    const auto d = doc.at("d").get<std::size_t>(), M = doc.at("M").get<std::size_t>();
    Checkpoint ck;
    ck.info = {doc.at("alpha").get<double>(), doc.at("vocab_sha256").get<std::string>(), doc.at("seed").get<std::uint64_t>(),
               doc.at("L").get<std::size_t>()};
    const auto wbytes = detail::read_file(manifest.parent_path() / doc.at("weights").get<std::string>());
    const auto bbytes = detail::read_file(manifest.parent_path() / doc.at("bias").get<std::string>());
    if (wbytes.size() != M * d * 8 || bbytes.size() != M * 8) throw DataError(where + "size mismatch in weight blobs");
    if (sha256_hex(wbytes) != doc.at("weights_sha256").get<std::string>() ||
        sha256_hex(bbytes) != doc.at("bias_sha256").get<std::string>())
      throw DataError(where + "checksum mismatch in weight blobs");
    ck.layer.weights = Matrix(M, d);
    const auto w = detail::decode_f64le(wbytes);
    std::copy(w.begin(), w.end(), ck.layer.weights.flat().begin());
    ck.layer.bias = detail::decode_f64le(bbytes);
    if (!all_finite(ck.layer.weights.flat()) || !all_finite(ck.layer.bias)) throw DataError(where + "non-finite weights");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + e.what());
  }
}

}  // namespace supcbm
