#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emostim/bundle.hpp"
#include "emostim/catalog.hpp"

namespace emostim {

enum class Pooling { mean_tokens, last_token };
enum class AttentionMode { last_layer_received, rollout };
enum class HeatmapFormat { ansi, html, csv };

Pooling parse_pooling(std::string_view s);
AttentionMode parse_attention_mode(std::string_view s);
HeatmapFormat parse_heatmap_format(std::string_view s);
std::string_view to_string(Pooling p);
std::string_view to_string(AttentionMode m);

inline constexpr std::size_t kDefaultMetaLength = 10;

struct MetaPrompt {
  int layer = 0;
  std::vector<std::int64_t> token_ids;
  std::string text;
  std::optional<Polarity> source_polarity;
};

struct TokenWeight {
  std::string token;
  double weight = 0.0;

  bool operator==(const TokenWeight&) const = default;
};

// Component-wise arithmetic mean. Throws Error(invalid_argument) when empty
// and Error(dimension_mismatch) when lengths differ.
std::vector<double> mean_vector(std::span<const std::vector<double>> vectors);

// Pools a seq_len x d hidden-state matrix to one d-vector.
std::vector<double> pool_prompt(const MatrixView& hidden, Pooling method);

// Logit-lens decode: top-`length` tokens of unembedding * mean_vec, logit
// descending, ties to the lower token id; text is the concatenated vocab.
MetaPrompt decode_meta(std::span<const double> mean_vec, const TensorBundle& bundle, int layer,
                       std::size_t length = kDefaultMetaLength,
                       std::optional<Polarity> source_polarity = std::nullopt);

// Pools each listed prompt at `layer`, averages, and decodes.
MetaPrompt decode_family(const TensorBundle& bundle, std::span<const std::size_t> prompt_indices,
                         int layer, Pooling pooling = Pooling::mean_tokens,
                         std::size_t length = kDefaultMetaLength,
                         std::optional<Polarity> source_polarity = std::nullopt);

// Attention received by each position from the final position, averaged
// over heads, max-normalized to [0, 1]. Output length = prompt token count.
std::vector<TokenWeight> token_importance(const TensorBundle& bundle, std::size_t prompt_index,
                                          AttentionMode mode = AttentionMode::last_layer_received);

// Deterministic text rendering. Throws Error(out_of_range) for a weight
// outside [0, 1].
std::string render_heatmap(std::span<const TokenWeight> tokens, HeatmapFormat format);

}  // namespace emostim
