#pragma once

// On-disk format: a JSON manifest
//   {version: 1, n, d, kind, dtype: "f32le", ids: [...], labels?: [...],
//    split?: str, sha256: <hex of blob>, blob?: <file name>}
// next to a blob of n*d little-endian float32 values, row-major. The blob
// defaults to the manifest path with its extension replaced by ".bin".

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "supcbm/digest.hpp"
#include "supcbm/error.hpp"
#include "supcbm/linalg.hpp"

namespace supcbm {

enum class EmbeddingKind { image, concept_text };
enum class Split { train, dev, test };

inline std::string_view to_string(EmbeddingKind k) {
  return k == EmbeddingKind::image ? "image" : "concept-text";
}
inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: break;
  }
  return "test";
}

struct EmbeddingMatrix {
  Matrix values;  // n x d
  std::vector<std::string> ids;
  EmbeddingKind kind = EmbeddingKind::image;

  std::size_t size() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
  std::span<const double> row(std::size_t i) const { return values.row(i); }
  bool operator==(const EmbeddingMatrix&) const = default;
};

struct LabeledDataset {
  EmbeddingMatrix embeddings;
  std::vector<std::size_t> labels;
  Split split = Split::train;

  std::size_t size() const { return embeddings.size(); }
  bool operator==(const LabeledDataset&) const = default;
};

inline constexpr int kEmbeddingFormatVersion = 1;

/// u.v / (|u||v|), accumulated left to right in double precision.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw UsageError("cosine: dimension mismatch");
  const double nu = norm2(u), nv = norm2(v);
  if (nu == 0.0 || nv == 0.0) throw UsageError("cosine: zero-norm vector");
  return dot(u, v) / (nu * nv);
}

namespace detail {

inline std::filesystem::path blob_path_for(const std::filesystem::path& manifest,
                                           const nlohmann::json* doc = nullptr) {
  if (doc) {
    if (auto it = doc->find("blob"); it != doc->end()) return manifest.parent_path() / it->get<std::string>();
  }
  auto p = manifest;
  return p.replace_extension(".bin");
}

inline std::vector<std::uint8_t> encode_f32le(const Matrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(m.flat().size() * 4);
  for (double v : m.flat()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + p.string());
}

}  // namespace detail

inline void save_embeddings(const std::filesystem::path& manifest, const EmbeddingMatrix& m,
                            const std::vector<std::size_t>* labels = nullptr,
                            std::optional<Split> split = std::nullopt) {
  const auto blob = detail::encode_f32le(m.values);
  nlohmann::json doc = {{"version", kEmbeddingFormatVersion},
                        {"n", m.size()},
                        {"d", m.dim()},
                        {"kind", std::string(to_string(m.kind))},
                        {"dtype", "f32le"},
                        {"ids", m.ids},
                        {"sha256", sha256_hex(blob)},
                        {"blob", detail::blob_path_for(manifest).filename().string()}};
  if (labels) doc["labels"] = *labels;
  if (split) doc["split"] = std::string(to_string(*split));
  detail::write_file(detail::blob_path_for(manifest), blob);
  const std::string text = doc.dump(2) + "\n";
  detail::write_file(manifest, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void save_dataset(const std::filesystem::path& manifest, const LabeledDataset& ds) {
  save_embeddings(manifest, ds.embeddings, &ds.labels, ds.split);
}

struct LoadedEmbeddings {
  EmbeddingMatrix matrix;
  std::optional<std::vector<std::size_t>> labels;
  std::optional<Split> split;
};

inline LoadedEmbeddings load_embeddings_any(const std::filesystem::path& manifest) {
  const auto text = detail::read_file(manifest);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(manifest.string() + ": malformed manifest: " + e.what());
  }
  const std::string where = manifest.string() + ": ";
  LoadedEmbeddings out;
  std::size_t n = 0, d = 0;
  try {
    if (doc.at("version").get<int>() != kEmbeddingFormatVersion)
      throw DataError(where + "version mismatch (found " + doc.at("version").dump() + ", expected " +
                      std::to_string(kEmbeddingFormatVersion) + ")");
    if (doc.at("dtype").get<std::string>() != "f32le")
      throw DataError(where + "unsupported dtype " + doc.at("dtype").dump());
    n = doc.at("n").get<std::size_t>();
    d = doc.at("d").get<std::size_t>();
    const auto kind = doc.at("kind").get<std::string>();
    if (kind == "image") out.matrix.kind = EmbeddingKind::image;
    else if (kind == "concept-text") out.matrix.kind = EmbeddingKind::concept_text;
    else throw DataError(where + "unknown kind '" + kind + "'");
    out.matrix.ids = doc.at("ids").get<std::vector<std::string>>();
    if (auto it = doc.find("labels"); it != doc.end()) out.labels = it->get<std::vector<std::size_t>>();
    if (auto it = doc.find("split"); it != doc.end()) {
      const auto s = it->get<std::string>();
      if (s == "train") out.split = Split::train;
      else if (s == "dev") out.split = Split::dev;
      else if (s == "test") out.split = Split::test;
      else throw DataError(where + "unknown split '" + s + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + e.what());
  }
  if (d == 0 && n > 0) throw DataError(where + "d must be positive");
  if (out.matrix.ids.size() != n)
    throw DataError(where + "ids has " + std::to_string(out.matrix.ids.size()) + " entries, n = " + std::to_string(n));
  if (out.labels && out.labels->size() != n)
    throw DataError(where + "labels has " + std::to_string(out.labels->size()) + " entries, n = " + std::to_string(n));

  const auto blob = detail::read_file(detail::blob_path_for(manifest, &doc));
  if (blob.size() != n * d * 4)
    throw DataError(where + "size mismatch: blob has " + std::to_string(blob.size()) + " bytes, expected " +
                    std::to_string(n * d * 4));
  if (auto it = doc.find("sha256"); it != doc.end() && it->get<std::string>() != sha256_hex(blob))
    throw DataError(where + "checksum mismatch");

  out.matrix.values = Matrix(n, d);
  auto flat = out.matrix.values.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{blob[4 * i + b]} << (8 * b);
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v))
      throw DataError(where + "non-finite value at row " + std::to_string(i / d) + ", column " + std::to_string(i % d));
    flat[i] = v;
  }
  return out;
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& manifest) {
  return load_embeddings_any(manifest).matrix;
}

inline LabeledDataset load_dataset(const std::filesystem::path& manifest) {
  auto loaded = load_embeddings_any(manifest);
  if (!loaded.labels) throw DataError(manifest.string() + ": manifest has no labels");
  if (loaded.matrix.kind != EmbeddingKind::image) throw DataError(manifest.string() + ": dataset kind must be image");
  return {std::move(loaded.matrix), std::move(*loaded.labels), loaded.split.value_or(Split::train)};
}

}  // namespace supcbm
