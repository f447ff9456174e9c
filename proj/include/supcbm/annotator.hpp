#pragma once

// Label-aware concept annotation. An image of class y is scored only against
// y's concept groups; within each group the k most similar descriptive
// concepts are kept (a 1-D max pool with kernel = stride = group size).

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "supcbm/concept_vocabulary.hpp"
#include "supcbm/embedding_store.hpp"
#include "supcbm/error.hpp"

namespace supcbm {

struct GroupScores {
  std::vector<std::size_t> ids;
  std::vector<double> similarities;  // parallel to ids, group order
};

/// Cosine of `x` against every concept in each of class `label`'s groups.
/// Row i of `concept_embeddings` embeds vocabulary pair i.
inline std::vector<GroupScores> score_class_concepts(std::span<const double> x, std::size_t label,
                                                     const ConceptVocabulary& vocab,
                                                     const EmbeddingMatrix& concept_embeddings) {
  if (label >= vocab.num_classes()) throw UsageError("score_class_concepts: label out of range");
  std::vector<GroupScores> out;
  out.reserve(vocab.groups[label].size());
  for (const auto& g : vocab.groups[label]) {
    GroupScores s;
    s.ids = g.ids;
    for (std::size_t id : g.ids) {
      if (id >= concept_embeddings.size())
        throw DataError("missing concept embedding for concept " + std::to_string(id) + " " + vocab.pairs.at(id).key());
      s.similarities.push_back(cosine(x, concept_embeddings.row(id)));
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Per group, the ids of the min(k, size) largest similarities (ties go to
/// the lower id); returns the ascending union.
inline std::vector<std::size_t> pool(const std::vector<GroupScores>& groups, std::size_t k) {
  if (k == 0) throw UsageError("pool: k must be at least 1");
  std::vector<std::size_t> selected;
  std::vector<std::size_t> order;
  for (const auto& g : groups) {
    order.resize(g.ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (g.similarities[a] != g.similarities[b]) return g.similarities[a] > g.similarities[b];
                        return g.ids[a] < g.ids[b];
                      });
    for (std::size_t t = 0; t < take; ++t) selected.push_back(g.ids[order[t]]);
  }
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());
  return selected;
}

struct Annotation {
  std::string image_id;
  std::size_t label = 0;
  std::vector<std::size_t> selected;  // ascending
  bool operator==(const Annotation&) const = default;
};

struct AnnotationSet {
  std::size_t num_concepts = 0;
  std::vector<Annotation> items;

  std::size_t size() const { return items.size(); }

  /// GT_c for image `i`: 1 at selected ids, 0 elsewhere.
  std::vector<double> dense(std::size_t i) const {
    std::vector<double> gt(num_concepts, 0.0);
    for (std::size_t id : items.at(i).selected) gt[id] = 1.0;
    return gt;
  }
  bool operator==(const AnnotationSet&) const = default;
};

inline AnnotationSet annotate_dataset(const LabeledDataset& dataset, const ConceptVocabulary& vocab,
                                      const InterventionMatrix& matrix,
                                      const EmbeddingMatrix& concept_embeddings, std::size_t k) {
  if (k == 0) throw UsageError("annotate_dataset: k must be at least 1");
  if (matrix.rows() != vocab.num_concepts() || matrix.cols() != vocab.num_classes())
    throw UsageError("annotate_dataset: matrix shape does not match vocabulary");
  if (concept_embeddings.size() < vocab.num_concepts())
    throw DataError("annotate_dataset: " + std::to_string(concept_embeddings.size()) + " concept embeddings for " +
                    std::to_string(vocab.num_concepts()) + " concepts");
  if (dataset.size() > 0 && concept_embeddings.dim() != dataset.embeddings.dim())
    throw DataError("annotate_dataset: concept and image embeddings differ in dimension");

  AnnotationSet out;
  out.num_concepts = vocab.num_concepts();
  out.items.reserve(dataset.size());
  for (std::size_t n = 0; n < dataset.size(); ++n) {
    const std::size_t y = dataset.labels[n];
    if (y >= vocab.num_classes())
      throw DataError("annotate_dataset: label " + std::to_string(y) + " of row " + std::to_string(n) + " out of range");
    auto selected = pool(score_class_concepts(dataset.embeddings.row(n), y, vocab, concept_embeddings), k);
    for (std::size_t id : selected)
      if (!matrix(id, y)) throw DataError("annotate_dataset: selected concept outside the label's column");
    out.items.push_back({dataset.embeddings.ids.at(n), y, std::move(selected)});
  }
  return out;
}

// JSON-lines: {"image_id": str, "label": int, "selected": [ids]} per line.

inline void save_annotations(const std::filesystem::path& path, const AnnotationSet& set) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& a : set.items)
    out << nlohmann::json{{"image_id", a.image_id}, {"label", a.label}, {"selected", a.selected}}.dump() << '\n';
}

inline AnnotationSet load_annotations(const std::filesystem::path& path, std::size_t num_concepts) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  AnnotationSet set;
  set.num_concepts = num_concepts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Annotation a{j.at("image_id").get<std::string>(), j.at("label").get<std::size_t>(),
                   j.at("selected").get<std::vector<std::size_t>>()};
      for (std::size_t id : a.selected)
        if (id >= num_concepts) throw DataError("concept id " + std::to_string(id) + " out of range");
      set.items.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return set;
}

}  // namespace supcbm
