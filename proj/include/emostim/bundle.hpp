#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace emostim {

// Row-major float32 matrix view.
struct MatrixView {
  std::span<const float> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::span<const float> row(std::size_t r) const { return data.subspan(r * cols, cols); }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct BundlePrompt {
  std::string text;
  std::vector<std::int64_t> token_ids;
  // Optional character offsets (begin, end) per token.
  std::vector<std::pair<std::int64_t, std::int64_t>> offsets;
  // hidden[k] holds layer layers[k]: seq_len x d, row-major.
  std::vector<std::vector<float>> hidden;
  // (layer count) x heads x seq_len x seq_len, row-major.
  std::optional<std::vector<float>> attention;

  std::size_t seq_len() const { return token_ids.size(); }
};

struct TensorBundle {
  std::string model_id;
  std::size_t hidden_dim = 0;
  std::size_t vocab_size = 0;
  std::size_t heads = 0;
  std::vector<int> layers;  // model layer indices present, ascending
  std::vector<std::string> vocab;
  std::vector<float> unembedding;  // V x d, row-major
  std::vector<BundlePrompt> prompts;
  std::optional<std::string> tokenizer_hash;

  MatrixView unembedding_view() const { return {unembedding, vocab_size, hidden_dim}; }
  // Position of a model layer index in `layers`; nullopt when absent.
  std::optional<std::size_t> layer_slot(int layer) const;
  // Throws Error(out_of_range).
  MatrixView hidden(std::size_t prompt, int layer) const;
  // Head h of layer slot k for a prompt; throws Error(missing_attention).
  MatrixView attention(std::size_t prompt, std::size_t layer_slot, std::size_t head) const;

  // Shape and value checks shared by the reader and writer. Throws
  // Error(corrupt_bundle) naming the offending blob.
  void validate() const;
};

struct BundleReadResult {
  TensorBundle bundle;
  std::vector<std::string> warnings;
};

inline constexpr const char* kManifestName = "manifest.json";

std::string hidden_blob_name(std::size_t prompt, int layer);
std::string attention_blob_name(std::size_t prompt);
inline constexpr const char* kUnembedBlobName = "unembed.bin";

// Reads <dir>/manifest.json and its sibling blobs. Throws Error(io) for a
// missing manifest and Error(corrupt_bundle) for any structural defect.
BundleReadResult read_bundle(const std::filesystem::path& dir);

// Writes manifest and blobs in canonical form. Existing files are replaced.
void write_bundle(const TensorBundle& bundle, const std::filesystem::path& dir);

nlohmann::ordered_json bundle_manifest(const TensorBundle& bundle);

}  // namespace emostim
