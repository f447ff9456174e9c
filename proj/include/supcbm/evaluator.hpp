#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "supcbm/annotator.hpp"
#include "supcbm/cbm_core.hpp"
#include "supcbm/concept_vocabulary.hpp"
#include "supcbm/embedding_store.hpp"
#include "supcbm/error.hpp"

namespace supcbm {

/// Anything with per-unit activations feeding a class-score head.
template <class M>
concept ScoringModel = requires(const M& m, std::span<const double> v, std::size_t i) {
  { m.num_units() } -> std::convertible_to<std::size_t>;
  { m.num_classes() } -> std::convertible_to<std::size_t>;
  { m.units(v) } -> std::convertible_to<std::vector<double>>;
  { m.scores(v) } -> std::convertible_to<std::vector<double>>;
  { m.contribution(v, i, i) } -> std::convertible_to<double>;
};

namespace detail {

template <ScoringModel Model>
Matrix all_units(const Model& model, const LabeledDataset& data) {
  Matrix u(data.size(), model.num_units());
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto row = model.units(data.embeddings.row(n));
    std::copy(row.begin(), row.end(), u.row(n).begin());
  }
  return u;
}

/// Accuracy with the units in `removed` zeroed before the head.
template <ScoringModel Model>
double masked_accuracy(const Model& model, const Matrix& units, const std::vector<std::size_t>& labels,
                       const std::vector<bool>& removed) {
  std::size_t hits = 0;
  std::vector<double> u(units.cols());
  for (std::size_t n = 0; n < units.rows(); ++n) {
    const auto row = units.row(n);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = removed[i] ? 0.0 : row[i];
    hits += argmax(model.scores(u)).index == labels[n];
  }
  return static_cast<double>(hits) / static_cast<double>(units.rows());
}

}  // namespace detail

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
template <ScoringModel Model>
double accuracy(const Model& model, const LabeledDataset& data) {
  if (data.size() == 0) throw UsageError("accuracy: empty dataset");
  return detail::masked_accuracy(model, detail::all_units(model, data), data.labels,
                                 std::vector<bool>(model.num_units(), false));
}

/// Accuracy when every class score ties and the lowest index wins.
inline double tie_break_floor(const LabeledDataset& data) {
  if (data.size() == 0) throw UsageError("tie_break_floor: empty dataset");
  return static_cast<double>(std::count(data.labels.begin(), data.labels.end(), std::size_t{0})) /
         static_cast<double>(data.size());
}

struct ImportanceRanking {
  std::vector<std::size_t> ids;  // descending importance, ties by ascending id
  std::vector<double> scores;    // parallel to ids
};

/// importance(i) = mean over rows of unit i's contribution to the predicted
/// class's score.
template <ScoringModel Model>
ImportanceRanking rank_importance(const Model& model, const LabeledDataset& data) {
  if (data.size() == 0) throw UsageError("rank_importance: empty dataset");
  std::vector<double> total(model.num_units(), 0.0);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto u = model.units(data.embeddings.row(n));
    const std::size_t yhat = argmax(model.scores(u)).index;
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += model.contribution(u, i, yhat);
  }
  for (double& t : total) t /= static_cast<double>(data.size());
  ImportanceRanking r;
  r.ids.resize(total.size());
  std::iota(r.ids.begin(), r.ids.end(), std::size_t{0});
  std::stable_sort(r.ids.begin(), r.ids.end(), [&](std::size_t a, std::size_t b) { return total[a] > total[b]; });
  for (std::size_t id : r.ids) r.scores.push_back(total[id]);
  return r;
}

inline const std::vector<double> kDefaultRemovalFractions = {0.0, 0.01, 0.02, 0.05, 0.10, 0.25, 0.5, 1.0};

struct LeakageCurve {
  std::string model_tag;
  std::vector<double> fractions;
  std::vector<std::size_t> removed;  // units zeroed at each fraction
  std::vector<double> accuracies;
};

/// Number of top units removed at fraction f: ceil(f * units), with a small
/// slack so that e.g. 0.1 * 270 removes 27 rather than 28.
inline std::size_t removal_count(double fraction, std::size_t units) {
  const double raw = fraction * static_cast<double>(units);
  const auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(n, units);
}

/// Ranks units once on `data`, then for each fraction zeroes the top
/// ceil(f * units) and re-measures accuracy.
template <ScoringModel Model>
LeakageCurve leakage_curve(const Model& model, const LabeledDataset& data, const std::vector<double>& fractions,
                           std::string tag) {
  if (fractions.empty() || fractions.front() != 0.0) throw UsageError("leakage_curve: fractions must start at 0");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (fractions[i] < 0.0 || fractions[i] > 1.0) throw UsageError("leakage_curve: fractions must lie in [0, 1]");
    if (i > 0 && !(fractions[i] > fractions[i - 1])) throw UsageError("leakage_curve: fractions must be strictly ascending");
  }
  const auto ranking = rank_importance(model, data);
  const auto units = detail::all_units(model, data);
  LeakageCurve curve{std::move(tag), fractions, {}, {}};
  std::vector<bool> removed(model.num_units(), false);
  for (double f : fractions) {
    const std::size_t count = removal_count(f, model.num_units());
    for (std::size_t r = 0; r < count; ++r) removed[ranking.ids[r]] = true;
    curve.removed.push_back(count);
    curve.accuracies.push_back(detail::masked_accuracy(model, units, data.labels, removed));
  }
  return curve;
}

inline void write_curves_csv(std::ostream& out, const std::vector<LeakageCurve>& curves) {
  out << "fraction,accuracy,model\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.fractions.size(); ++i)
      out << c.fractions[i] << ',' << c.accuracies[i] << ',' << c.model_tag << '\n';
}

inline nlohmann::json curves_summary(const std::vector<LeakageCurve>& curves, double floor) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : curves)
    list.push_back({{"model", c.model_tag}, {"fractions", c.fractions}, {"removed", c.removed}, {"accuracy", c.accuracies}});
  return {{"importance", "mean contribution of each unit to the predicted class score over the evaluation split"},
          {"removal", "activations of the top-ranked units zeroed at inference; ranking frozen at fraction 0"},
          {"tie_break_floor", floor},
          {"curves", std::move(list)}};
}

// ---------------------------------------------------------------------------
// Intervention

enum class EditAction { set_zero, set_one, clear };
using EditMap = std::map<std::size_t, EditAction>;

struct InterventionResult {
  PredictionRecord before;
  PredictionRecord after;
};

/// Overrides concept probabilities (set_one -> 1.0, set_zero -> 0.0, clear
/// keeps the predicted value) and rescores through the matrix.
inline InterventionResult intervene(const SupCbmModel& model, std::span<const double> x, const EditMap& edits) {
  for (const auto& [id, action] : edits)
    if (id >= model.num_units()) throw UsageError("intervene: concept id " + std::to_string(id) + " out of range");
  InterventionResult r;
  r.before = predict(model, x);
  auto c = r.before.c;
  for (const auto& [id, action] : edits) {
    if (action == EditAction::set_one) c[id] = 1.0;
    else if (action == EditAction::set_zero) c[id] = 0.0;
  }
  r.after = make_record(std::move(c), model.matrix);
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic fixture

struct SyntheticConfig {
  std::size_t num_classes = 10;
  std::size_t p = 5;
  std::size_t q = 6;
  std::size_t k = 2;
  std::size_t dim = 256;
  std::size_t images_per_class = 200;
  double noise = 0.1;
  std::uint64_t seed = 7;
  /// Classes 2m and 2m+1 share their first part verbatim (partial overlap).
  bool share_first_part = true;
  /// The last class copies the second-to-last class's parts (identical columns).
  bool duplicate_last_class = false;
  double train_fraction = 0.7;
  double dev_fraction = 0.1;
};

struct SyntheticFixture {
  std::string dump;  // concept dump document the vocabulary was ingested from
  ConceptVocabulary vocab;
  InterventionMatrix matrix;
  EmbeddingMatrix concepts;
  LabeledDataset train, dev, test;
  /// Concepts each class's images were generated from.
  std::vector<std::vector<std::size_t>> generating;
};

namespace detail {

inline nlohmann::json synthetic_dump(const SyntheticConfig& cfg) {
  static constexpr const char* dims[] = {"shape", "color", "size"};
  auto part = [&](std::size_t cls, std::size_t g) {
    nlohmann::json descs = nlohmann::json::array();
    for (std::size_t r = 0; r < cfg.q; ++r)
      descs.push_back({{"text", "variant " + std::to_string(r) + " of part " + std::to_string(cls) + "." + std::to_string(g)},
                       {"dimension", dims[r % 3]}});
    return nlohmann::json{{"name", "part " + std::to_string(cls) + "." + std::to_string(g)}, {"descriptions", descs}};
  };
  nlohmann::json doc = nlohmann::json::array();
  for (std::size_t j = 0; j < cfg.num_classes; ++j) {
    nlohmann::json parts = nlohmann::json::array();
    if (cfg.duplicate_last_class && cfg.num_classes >= 2 && j == cfg.num_classes - 1) {
      parts = doc[j - 1]["parts"];
    } else {
      for (std::size_t g = 0; g < cfg.p; ++g)
        parts.push_back(cfg.share_first_part && g == 0 && j % 2 == 1 ? part(j - 1, 0) : part(j, g));
    }
    doc.push_back({{"class", "class " + std::to_string(j)}, {"parts", parts}});
  }
  return doc;
}

/// Rounds through float so in-memory values equal what the f32 store reloads.
inline void round_to_f32(std::span<double> v) {
  for (double& x : v) x = static_cast<float>(x);
}

}  // namespace detail

/// Desk-scale fixture with known ground truth. Concept embeddings are random
/// unit vectors (exactly orthonormal when M <= d). An image is the normalized
/// sum of its class's concept vectors plus isotropic Gaussian noise whose
/// expected squared norm is noise^2.
inline SyntheticFixture gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes == 0 || cfg.p == 0 || cfg.q == 0 || cfg.k == 0 || cfg.dim == 0)
    throw UsageError("gen_synthetic: sizes must be positive");
  if (cfg.noise < 0.0) throw UsageError("gen_synthetic: noise must be non-negative");
  if (cfg.train_fraction < 0.0 || cfg.dev_fraction < 0.0 || cfg.train_fraction + cfg.dev_fraction > 1.0)
    throw UsageError("gen_synthetic: split fractions must be non-negative and sum to at most 1");

  SyntheticFixture fx;
  fx.dump = detail::synthetic_dump(cfg).dump(2);
  fx.vocab = ingest_concept_dump(fx.dump).vocabulary;
  fx.matrix = build_intervention_matrix(fx.vocab);
  const std::size_t M = fx.vocab.num_concepts(), d = cfg.dim, L = cfg.num_classes;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  fx.concepts.kind = EmbeddingKind::concept_text;
  fx.concepts.values = Matrix(M, d);
  for (std::size_t i = 0; i < M; ++i) {
    auto row = fx.concepts.values.row(i);
    for (double& v : row) v = gauss(rng);
    if (M <= d) {
      for (std::size_t prev = 0; prev < i; ++prev) {
        const auto pr = fx.concepts.values.row(prev);
        const double proj = dot(row, pr);
        for (std::size_t t = 0; t < d; ++t) row[t] -= proj * pr[t];
      }
    }
    const double n = norm2(row);
    for (double& v : row) v /= n;
    fx.concepts.ids.push_back(fx.vocab.pairs[i].key());
  }
  detail::round_to_f32(fx.concepts.values.flat());

  for (std::size_t j = 0; j < L; ++j) fx.generating.push_back(fx.vocab.class_concepts(j));

  const std::size_t total = L * cfg.images_per_class;
  Matrix images(total, d);
  std::vector<std::size_t> labels(total);
  std::vector<std::string> ids(total);
  const double sigma = cfg.noise / std::sqrt(static_cast<double>(d));
  std::vector<double> v(d);
  for (std::size_t j = 0; j < L; ++j) {
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t id : fx.generating[j]) {
      const auto e = fx.concepts.values.row(id);
      for (std::size_t t = 0; t < d; ++t) v[t] += e[t];
    }
    const double n = norm2(v);
    for (std::size_t s = 0; s < cfg.images_per_class; ++s) {
      const std::size_t r = j * cfg.images_per_class + s;
      auto row = images.row(r);
      for (std::size_t t = 0; t < d; ++t) row[t] = v[t] / n + sigma * gauss(rng);
      labels[r] = j;
      ids[r] = "img-" + std::to_string(j) + "-" + std::to_string(s);
    }
  }
  detail::round_to_f32(images.flat());

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(cfg.train_fraction * static_cast<double>(total));
  const auto n_dev = static_cast<std::size_t>(cfg.dev_fraction * static_cast<double>(total));
  auto take = [&](std::size_t from, std::size_t to, Split split) {
    LabeledDataset ds;
    ds.split = split;
    ds.embeddings.kind = EmbeddingKind::image;
    ds.embeddings.values = Matrix(to - from, d);
    for (std::size_t r = from; r < to; ++r) {
      const auto src = images.row(order[r]);
      std::copy(src.begin(), src.end(), ds.embeddings.values.row(r - from).begin());
      ds.embeddings.ids.push_back(ids[order[r]]);
      ds.labels.push_back(labels[order[r]]);
    }
    return ds;
  };
  fx.train = take(0, n_train, Split::train);
  fx.dev = take(n_train, n_train + n_dev, Split::dev);
  fx.test = take(n_train + n_dev, total, Split::test);
  return fx;
}

}  // namespace supcbm
