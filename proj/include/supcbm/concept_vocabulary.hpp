#pragma once

// Two-level concept vocabulary: classes own perceptual parts ("tail"), each
// part owns descriptive variants ("long and thin"). Every distinct
// (part, description) pair gets one global concept id; the binary
// intervention matrix records which concepts may vote for which class.

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "supcbm/digest.hpp"
#include "supcbm/error.hpp"

namespace supcbm {

/// Descriptive entries longer than this many characters are dropped on ingest.
inline constexpr std::size_t kMaxDescriptiveLength = 40;

struct ClassLabel {
  std::size_t index = 0;
  std::string name;
  bool operator==(const ClassLabel&) const = default;
};

enum class Dimension { shape, color, size, unspecified };

inline std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::shape: return "shape";
    case Dimension::color: return "color";
    case Dimension::size: return "size";
    case Dimension::unspecified: break;
  }
  return "unspecified";
}

inline std::optional<Dimension> parse_dimension(std::string_view s) {
  if (s == "shape") return Dimension::shape;
  if (s == "color" || s == "colour") return Dimension::color;
  if (s == "size") return Dimension::size;
  if (s == "unspecified") return Dimension::unspecified;
  return std::nullopt;
}

/// Lower-cases ASCII letters, trims, and collapses whitespace runs to one space.
inline std::string normalize_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char ch : s) {
    if (std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

/// Number of UTF-8 code points.
inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char ch : s)
    if ((ch & 0xC0) != 0x80) ++n;
  return n;
}

struct ConceptPair {
  std::string perceptual;
  std::string descriptive;
  Dimension dimension = Dimension::unspecified;

  std::string key() const {
    return "(" + normalize_text(perceptual) + ", " + normalize_text(descriptive) + ")";
  }
  bool operator==(const ConceptPair&) const = default;
};

/// One perceptual part of one class and the global ids of its descriptive pairs.
struct ConceptGroup {
  std::string part;
  std::vector<std::size_t> ids;
  bool operator==(const ConceptGroup&) const = default;
};

struct ConceptVocabulary {
  std::vector<ClassLabel> classes;
  std::vector<ConceptPair> pairs;
  /// groups[class][g]; every class has exactly `parts_per_class` groups.
  std::vector<std::vector<ConceptGroup>> groups;
  std::size_t parts_per_class = 0;        // p
  std::size_t descriptions_per_part = 0;  // q (largest group before drops)

  std::size_t num_concepts() const { return pairs.size(); }
  std::size_t num_classes() const { return classes.size(); }

  /// Ids involved in class `label`, ascending.
  std::vector<std::size_t> class_concepts(std::size_t label) const {
    std::vector<std::size_t> ids;
    for (const auto& g : groups.at(label)) ids.insert(ids.end(), g.ids.begin(), g.ids.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  bool operator==(const ConceptVocabulary&) const = default;
};

/// Binary concepts x classes matrix. Entry (i, j) = 1 iff concept i may vote
/// for class j.
class InterventionMatrix {
public:
  InterventionMatrix() = default;
  InterventionMatrix(std::size_t concepts, std::size_t classes)
      : rows_(concepts), cols_(classes), bits_(concepts * classes, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::uint8_t operator()(std::size_t concept_id, std::size_t label) const {
    return bits_[concept_id * cols_ + label];
  }
  void set(std::size_t concept_id, std::size_t label, bool on) {
    bits_.at(concept_id * cols_ + label) = on ? 1 : 0;
  }

  std::vector<std::size_t> column(std::size_t label) const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < rows_; ++i)
      if ((*this)(i, label)) ids.push_back(i);
    return ids;
  }

  std::size_t column_popcount(std::size_t label) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows_; ++i) n += (*this)(i, label);
    return n;
  }

  /// Row-major bitset, bit (i * cols + j) stored LSB-first within each byte.
  std::vector<std::uint8_t> packed() const {
    std::vector<std::uint8_t> out((bits_.size() + 7) / 8, 0);
    for (std::size_t b = 0; b < bits_.size(); ++b)
      if (bits_[b]) out[b / 8] |= static_cast<std::uint8_t>(1u << (b % 8));
    return out;
  }

  static InterventionMatrix from_packed(std::size_t concepts, std::size_t classes,
                                        std::span<const std::uint8_t> bytes) {
    InterventionMatrix m(concepts, classes);
    if (bytes.size() != (m.bits_.size() + 7) / 8)
      throw DataError("intervention matrix: packed size " + std::to_string(bytes.size()) +
                      " does not match " + std::to_string(concepts) + "x" +
                      std::to_string(classes));
    for (std::size_t b = 0; b < m.bits_.size(); ++b)
      m.bits_[b] = (bytes[b / 8] >> (b % 8)) & 1u;
    return m;
  }

  bool operator==(const InterventionMatrix&) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// ---------------------------------------------------------------------------
// Prompts

enum class PromptKind { parts, characteristics };

struct Prompt {
  std::string class_name;
  PromptKind kind;
  std::string text;
  bool operator==(const Prompt&) const = default;
};

inline std::string parts_prompt(std::string_view cls, std::size_t p) {
  std::string c(cls);
  return "To identify " + c + " visually, please list the most important " +
         std::to_string(p) + " visual parts which a " + c + " has.";
}

inline std::string characteristics_prompt(std::string_view cls, std::string_view part,
                                          std::size_t q) {
  std::string c(cls);
  return "To visually identify " + c + ", please describe the " + std::to_string(q) +
         " most common characteristics of " + c + "'s " + std::string(part) +
         " from the three dimensions of shape, color, or size.";
}

/// One parts prompt and one characteristics template (with a literal `{CEP}`
/// placeholder) per class.
inline std::vector<Prompt> emit_prompts(const std::vector<ClassLabel>& classes, std::size_t p,
                                        std::size_t q) {
  if (p == 0 || q == 0) throw UsageError("emit_prompts: p and q must be positive");
  std::vector<Prompt> out;
  for (const auto& c : classes) {
    if (c.name.empty()) throw UsageError("emit_prompts: empty class name");
    out.push_back({c.name, PromptKind::parts, parts_prompt(c.name, p)});
    out.push_back({c.name, PromptKind::characteristics, characteristics_prompt(c.name, "{CEP}", q)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingest

struct IngestOptions {
  std::optional<std::size_t> parts_per_class;  // enforce exactly p parts
};

struct IngestResult {
  ConceptVocabulary vocabulary;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* field,
                                     const std::string& path) {
  if (!obj.is_object()) throw DataError("concept dump: " + path + " must be an object");
  auto it = obj.find(field);
  if (it == obj.end()) throw DataError("concept dump: " + path + " is missing field '" + field + "'");
  return *it;
}

inline std::string require_text(const nlohmann::json& v, const std::string& path) {
  if (!v.is_string()) throw DataError("concept dump: " + path + " must be a string");
  auto s = v.get<std::string>();
  if (normalize_text(s).empty()) throw DataError("concept dump: " + path + " is empty");
  return s;
}

}  // namespace detail

/// Parses a concept dump:
///   [{"class": str, "parts": [{"name": str,
///       "descriptions": [{"text": str, "dimension"?: str} | str, ...]}]}]
/// Over-long descriptions and within-class repeats are dropped with a warning;
/// identical pairs across classes share one id.
inline IngestResult ingest_concept_dump(std::string_view document, const IngestOptions& opts = {}) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    auto [line, col] = detail::line_col(document, e.byte == 0 ? 0 : e.byte - 1);
    throw DataError("concept dump: malformed document at line " + std::to_string(line) +
                    ", column " + std::to_string(col) + ": " + e.what());
  }
  if (!doc.is_array()) throw DataError("concept dump: top level must be a list of classes");

  IngestResult result;
  auto& vocab = result.vocabulary;
  std::unordered_map<std::string, std::size_t> id_by_key;
  std::set<std::string> class_names;

  for (std::size_t ci = 0; ci < doc.size(); ++ci) {
    const std::string cpath = "/" + std::to_string(ci);
    const auto& entry = doc[ci];
    std::string name = detail::require_text(detail::require(entry, "class", cpath), cpath + "/class");
    if (!class_names.insert(normalize_text(name)).second)
      throw DataError("concept dump: duplicate class name '" + name + "' at " + cpath);
    const auto& parts = detail::require(entry, "parts", cpath);
    if (!parts.is_array()) throw DataError("concept dump: " + cpath + "/parts must be a list");
    if (opts.parts_per_class && parts.size() != *opts.parts_per_class)
      throw DataError("concept dump: class '" + name + "' has " + std::to_string(parts.size()) +
                      " parts, expected " + std::to_string(*opts.parts_per_class));

    std::vector<ConceptGroup> groups;
    std::set<std::size_t> seen_in_class;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const std::string ppath = cpath + "/parts/" + std::to_string(pi);
      ConceptGroup group;
      group.part = detail::require_text(detail::require(parts[pi], "name", ppath), ppath + "/name");
      const auto& descs = detail::require(parts[pi], "descriptions", ppath);
      if (!descs.is_array())
        throw DataError("concept dump: " + ppath + "/descriptions must be a list");
      vocab.descriptions_per_part = std::max(vocab.descriptions_per_part, descs.size());

      for (std::size_t di = 0; di < descs.size(); ++di) {
        const std::string dpath = ppath + "/descriptions/" + std::to_string(di);
        const auto& d = descs[di];
        ConceptPair pair{group.part, {}, Dimension::unspecified};
        if (d.is_string()) {
          pair.descriptive = detail::require_text(d, dpath);
        } else {
          pair.descriptive = detail::require_text(detail::require(d, "text", dpath), dpath + "/text");
          if (auto it = d.find("dimension"); it != d.end() && !it->is_null()) {
            if (!it->is_string()) throw DataError("concept dump: " + dpath + "/dimension must be a string");
            auto dim = parse_dimension(normalize_text(it->get<std::string>()));
            if (!dim)
              throw DataError("concept dump: " + dpath + "/dimension '" + it->get<std::string>() +
                              "' is not one of shape, color, size");
            pair.dimension = *dim;
          }
        }
        if (utf8_length(pair.descriptive) > kMaxDescriptiveLength) {
          result.warnings.push_back("dropped over-long description at " + dpath + " (" +
                                    std::to_string(utf8_length(pair.descriptive)) + " chars)");
          continue;
        }
        const std::string key = pair.key();
        auto [it, inserted] = id_by_key.try_emplace(key, vocab.pairs.size());
        if (inserted) vocab.pairs.push_back(pair);
        if (!seen_in_class.insert(it->second).second) {
          result.warnings.push_back("dropped repeated pair " + key + " within class '" + name +
                                    "' at " + dpath);
          continue;
        }
        group.ids.push_back(it->second);
      }
      if (group.ids.empty())
        result.warnings.push_back("part '" + group.part + "' of class '" + name +
                                  "' has no surviving descriptions");
      groups.push_back(std::move(group));
    }
    if (seen_in_class.empty())
      throw DataError("concept dump: class '" + name + "' has no surviving concept pairs");
    if (ci == 0) {
      vocab.parts_per_class = groups.size();
    } else if (groups.size() != vocab.parts_per_class) {
      throw DataError("concept dump: class '" + name + "' has " + std::to_string(groups.size()) +
                      " parts but earlier classes have " + std::to_string(vocab.parts_per_class));
    }
    vocab.classes.push_back({ci, std::move(name)});
    vocab.groups.push_back(std::move(groups));
  }
  return result;
}

inline InterventionMatrix build_intervention_matrix(const ConceptVocabulary& vocab) {
  InterventionMatrix m(vocab.num_concepts(), vocab.num_classes());
  for (std::size_t j = 0; j < vocab.groups.size(); ++j)
    for (const auto& g : vocab.groups[j])
      for (std::size_t id : g.ids) m.set(id, j, true);
  return m;
}

// ---------------------------------------------------------------------------
// Pairwise overlap between class concept sets

struct ClassOverlap {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t shared = 0;  // |C_a ∩ C_b|
  std::size_t only_a = 0;  // |C_a \ C_b|
  std::size_t only_b = 0;  // |C_b \ C_a|
  /// One class has no concept of its own, so the scores cannot separate it
  /// from the other in that direction.
  bool indistinguishable() const { return only_a == 0 || only_b == 0; }
  bool operator==(const ClassOverlap&) const = default;
};

inline std::vector<ClassOverlap> overlap_report(const ConceptVocabulary& vocab,
                                                const InterventionMatrix& matrix) {
  if (matrix.rows() != vocab.num_concepts() || matrix.cols() != vocab.num_classes())
    throw UsageError("overlap_report: matrix shape does not match vocabulary");
  std::vector<ClassOverlap> out;
  for (std::size_t a = 0; a < matrix.cols(); ++a) {
    for (std::size_t b = a + 1; b < matrix.cols(); ++b) {
      ClassOverlap r{a, b};
      for (std::size_t i = 0; i < matrix.rows(); ++i) {
        const bool in_a = matrix(i, a), in_b = matrix(i, b);
        r.shared += in_a && in_b;
        r.only_a += in_a && !in_b;
        r.only_b += in_b && !in_a;
      }
      out.push_back(r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Versioned vocabulary + matrix document

inline constexpr int kVocabularyFormatVersion = 1;

inline nlohmann::json to_json(const ConceptVocabulary& vocab, const InterventionMatrix& matrix) {
  using nlohmann::json;
  json classes = json::array();
  for (const auto& c : vocab.classes) classes.push_back(c.name);
  json pairs = json::array();
  for (const auto& p : vocab.pairs)
    pairs.push_back({{"perceptual", p.perceptual},
                     {"descriptive", p.descriptive},
                     {"dimension", std::string(to_string(p.dimension))}});
  json groups = json::array();
  for (const auto& cg : vocab.groups) {
    json row = json::array();
    for (const auto& g : cg) row.push_back({{"part", g.part}, {"ids", g.ids}});
    groups.push_back(std::move(row));
  }
  return {{"version", kVocabularyFormatVersion},
          {"p", vocab.parts_per_class},
          {"q", vocab.descriptions_per_part},
          {"classes", std::move(classes)},
          {"pairs", std::move(pairs)},
          {"groups", std::move(groups)},
          {"matrix",
           {{"rows", matrix.rows()},
            {"cols", matrix.cols()},
            {"bits", base64_encode(matrix.packed())}}}};
}

struct VocabularyBundle {
  ConceptVocabulary vocabulary;
  InterventionMatrix matrix;
};

/// Inverse of to_json. The stored matrix must equal the one rebuilt from the groups.
inline VocabularyBundle vocabulary_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("version").get<int>() != kVocabularyFormatVersion)
      throw DataError("vocabulary: unsupported version " + doc.at("version").dump());
    VocabularyBundle out;
    auto& v = out.vocabulary;
    v.parts_per_class = doc.at("p").get<std::size_t>();
    v.descriptions_per_part = doc.at("q").get<std::size_t>();
    const auto& classes = doc.at("classes");
    for (std::size_t i = 0; i < classes.size(); ++i)
      v.classes.push_back({i, classes[i].get<std::string>()});
    for (const auto& p : doc.at("pairs")) {
      auto dim = parse_dimension(p.at("dimension").get<std::string>());
      if (!dim) throw DataError("vocabulary: bad dimension " + p.at("dimension").dump());
      v.pairs.push_back({p.at("perceptual").get<std::string>(),
                         p.at("descriptive").get<std::string>(), *dim});
    }
    for (const auto& row : doc.at("groups")) {
      std::vector<ConceptGroup> gs;
      for (const auto& g : row) {
        ConceptGroup cg{g.at("part").get<std::string>(), g.at("ids").get<std::vector<std::size_t>>()};
        for (std::size_t id : cg.ids)
          if (id >= v.pairs.size()) throw DataError("vocabulary: group id " + std::to_string(id) + " out of range");
        gs.push_back(std::move(cg));
      }
      if (gs.size() != v.parts_per_class) throw DataError("vocabulary: class group count differs from p");
      v.groups.push_back(std::move(gs));
    }
    if (v.groups.size() != v.classes.size()) throw DataError("vocabulary: groups/classes length mismatch");
    const auto& m = doc.at("matrix");
    out.matrix = InterventionMatrix::from_packed(m.at("rows").get<std::size_t>(), m.at("cols").get<std::size_t>(),
                                                 base64_decode(m.at("bits").get<std::string>()));
    if (!(out.matrix == build_intervention_matrix(v)))
      throw DataError("vocabulary: stored intervention matrix is inconsistent with groups");
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("vocabulary: ") + e.what());
  }
}

/// Checksum binding checkpoints to the vocabulary they were trained with.
inline std::string vocabulary_digest(const ConceptVocabulary& vocab, const InterventionMatrix& matrix) {
  return sha256_hex(to_json(vocab, matrix).dump());
}

}  // namespace supcbm
