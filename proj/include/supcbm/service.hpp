#pragma once

// JSON request handlers for the inference API. They are pure functions of an
// immutable model so any number of server threads may call them at once;
// http_server.hpp binds them to routes.

#include <json.hpp>

#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "supcbm/cbm_core.hpp"
#include "supcbm/concept_vocabulary.hpp"
#include "supcbm/evaluator.hpp"

namespace supcbm {

inline constexpr const char* kSchemaHeader = "X-SupCBM-Schema";
inline constexpr int kApiSchemaVersion = 1;

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

inline nlohmann::json to_json(const PredictionRecord& r, const ConceptVocabulary& vocab) {
  return {{"c", r.c},
          {"l", r.l},
          {"predicted", r.predicted},
          {"predicted_name", vocab.classes.at(r.predicted).name},
          {"ties", r.ties},
          {"ambiguous", r.ambiguous()}};
}

class InferenceService {
public:
  /// `checkpoint_vocab_sha256` is the digest recorded at training time; a
  /// mismatch puts the service in a refusing state (409 on every route).
  InferenceService(SupCbmModel model, ConceptVocabulary vocab, std::string checkpoint_vocab_sha256)
      : model_(std::move(model)), vocab_(std::move(vocab)) {
    if (model_.matrix.rows() != vocab_.num_concepts() || model_.matrix.cols() != vocab_.num_classes())
      throw UsageError("service: model matrix does not match vocabulary");
    vocab_sha256_ = vocabulary_digest(vocab_, model_.matrix);
    checksum_ok_ = checkpoint_vocab_sha256 == vocab_sha256_;
    if (checksum_ok_ && model_.layer.num_concepts() != vocab_.num_concepts())
      throw UsageError("service: checkpoint concept count does not match vocabulary");
    if (!checksum_ok_)
      mismatch_ = "checkpoint was trained against vocabulary " + checkpoint_vocab_sha256 + ", loaded vocabulary is " +
                  vocab_sha256_;
  }

  bool checksum_ok() const { return checksum_ok_; }
  const SupCbmModel& model() const { return model_; }
  const ConceptVocabulary& vocabulary() const { return vocab_; }

  HttpResponse health() const {
    if (!checksum_ok_) return conflict();
    return {200,
            {{"status", "ok"},
             {"schema", kApiSchemaVersion},
             {"d", model_.layer.dim()},
             {"M", vocab_.num_concepts()},
             {"L", vocab_.num_classes()},
             {"vocab_sha256", vocab_sha256_}}};
  }

  HttpResponse concepts() const {
    if (!checksum_ok_) return conflict();
    return {200, to_json(vocab_, model_.matrix)};
  }

  HttpResponse predict(std::string_view body) const {
    if (!checksum_ok_) return conflict();
    try {
      const auto req = parse(body);
      const auto x = embedding(req);
      return {200, to_json(supcbm::predict(model_, x), vocab_)};
    } catch (const BadRequest& e) {
      return bad_request(e.what());
    }
  }

  /// Body: {"embedding": [d numbers], "edits": {"<id>": 0 | 1 | "clear", ...}}
  HttpResponse intervene(std::string_view body) const {
    if (!checksum_ok_) return conflict();
    try {
      const auto req = parse(body);
      const auto x = embedding(req);
      const auto edits = parse_edits(req);
      const auto r = supcbm::intervene(model_, x, edits);
      return {200, {{"before", to_json(r.before, vocab_)}, {"after", to_json(r.after, vocab_)}}};
    } catch (const BadRequest& e) {
      return bad_request(e.what());
    }
  }

private:
  struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  static HttpResponse bad_request(const std::string& msg) { return {400, {{"error", msg}}}; }
  HttpResponse conflict() const { return {409, {{"error", "vocabulary checksum mismatch: " + mismatch_}}}; }

  static nlohmann::json parse(std::string_view body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw BadRequest("request body must be a JSON object");
    return j;
  }

  std::vector<double> embedding(const nlohmann::json& req) const {
    auto it = req.find("embedding");
    if (it == req.end() || !it->is_array()) throw BadRequest("'embedding' must be an array of numbers");
    if (it->size() != model_.layer.dim())
      throw BadRequest("embedding has " + std::to_string(it->size()) + " values, model expects " +
                       std::to_string(model_.layer.dim()));
    std::vector<double> x;
    x.reserve(it->size());
    for (const auto& v : *it) {
      if (!v.is_number()) throw BadRequest("embedding entries must be numbers");
      x.push_back(v.get<double>());
      if (!std::isfinite(x.back())) throw BadRequest("embedding entries must be finite");
    }
    return x;
  }

  EditMap parse_edits(const nlohmann::json& req) const {
    EditMap edits;
    auto it = req.find("edits");
    if (it == req.end() || it->is_null()) return edits;
    if (!it->is_object()) throw BadRequest("'edits' must be an object mapping concept ids to 0, 1 or \"clear\"");
    for (const auto& [key, value] : it->items()) {
      std::size_t id = 0;
      try {
        std::size_t used = 0;
        id = std::stoul(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw BadRequest("edit key '" + key + "' is not a concept id");
      }
      if (id >= vocab_.num_concepts()) throw BadRequest("unknown concept id " + key);
      EditAction action;
      if (value == 1 || value == "set-1") action = EditAction::set_one;
      else if (value == 0 || value == "set-0") action = EditAction::set_zero;
      else if (value == "clear") action = EditAction::clear;
      else throw BadRequest("edit for concept " + key + " must be 0, 1 or \"clear\"");
      edits[id] = action;
    }
    return edits;
  }

  SupCbmModel model_;
  ConceptVocabulary vocab_;
  std::string vocab_sha256_;
  bool checksum_ok_ = false;
  std::string mismatch_;
};

}  // namespace supcbm
