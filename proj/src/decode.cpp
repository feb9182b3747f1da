#include "emostim/decode.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "emostim/error.hpp"

namespace emostim {

namespace {

struct Rgb {
  int r, g, b;
};

// Endpoints of a white-to-dark-red ramp.
constexpr Rgb kLight{255, 245, 240};
constexpr Rgb kDark{103, 0, 12};

Rgb ramp(double w) {
  auto mix = [w](int a, int b) {
    return static_cast<int>(std::lround(a + (b - a) * w));
  };
  return {mix(kLight.r, kDark.r), mix(kLight.g, kDark.g), mix(kLight.b, kDark.b)};
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

// Head-averaged n x n attention for one layer slot.
std::vector<double> head_average(const TensorBundle& bundle, std::size_t prompt,
                                 std::size_t slot) {
  const std::size_t n = bundle.prompts[prompt].seq_len();
  std::vector<double> avg(n * n, 0.0);
  for (std::size_t h = 0; h < bundle.heads; ++h) {
    const auto a = bundle.attention(prompt, slot, h);
    for (std::size_t i = 0; i < n * n; ++i) avg[i] += a.data[i];
  }
  for (auto& v : avg) v /= static_cast<double>(bundle.heads);
  return avg;
}

}  // namespace

Pooling parse_pooling(std::string_view s) {
  if (s == "mean_tokens") return Pooling::mean_tokens;
  if (s == "last_token") return Pooling::last_token;
  throw Error(ErrorKind::invalid_argument, "unknown pooling '" + std::string(s) + "'");
}

AttentionMode parse_attention_mode(std::string_view s) {
  if (s == "last_layer_received") return AttentionMode::last_layer_received;
  if (s == "rollout") return AttentionMode::rollout;
  throw Error(ErrorKind::invalid_argument, "unknown attention mode '" + std::string(s) + "'");
}

HeatmapFormat parse_heatmap_format(std::string_view s) {
  if (s == "ansi") return HeatmapFormat::ansi;
  if (s == "html") return HeatmapFormat::html;
  if (s == "csv") return HeatmapFormat::csv;
  throw Error(ErrorKind::invalid_argument, "unknown heatmap format '" + std::string(s) + "'");
}

std::string_view to_string(Pooling p) {
  return p == Pooling::mean_tokens ? "mean_tokens" : "last_token";
}

std::string_view to_string(AttentionMode m) {
  return m == AttentionMode::last_layer_received ? "last_layer_received" : "rollout";
}

std::vector<double> mean_vector(std::span<const std::vector<double>> vectors) {
  if (vectors.empty()) throw Error(ErrorKind::invalid_argument, "mean of an empty set");
  const std::size_t d = vectors.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& v : vectors) {
    if (v.size() != d)
      throw Error(ErrorKind::dimension_mismatch, "vectors of dimension " + std::to_string(d) +
                                                     " and " + std::to_string(v.size()));
    for (std::size_t k = 0; k < d; ++k) mean[k] += v[k];
  }
  for (auto& x : mean) x /= static_cast<double>(vectors.size());
  return mean;
}

std::vector<double> pool_prompt(const MatrixView& hidden, Pooling method) {
  if (hidden.rows == 0) throw Error(ErrorKind::invalid_argument, "empty token sequence");
  std::vector<double> out(hidden.cols, 0.0);
  if (method == Pooling::last_token) {
    const auto row = hidden.row(hidden.rows - 1);
    std::copy(row.begin(), row.end(), out.begin());
    return out;
  }
  for (std::size_t r = 0; r < hidden.rows; ++r) {
    const auto row = hidden.row(r);
    for (std::size_t c = 0; c < hidden.cols; ++c) out[c] += row[c];
  }
  for (auto& x : out) x /= static_cast<double>(hidden.rows);
  return out;
}

MetaPrompt decode_meta(std::span<const double> mean_vec, const TensorBundle& bundle, int layer,
                       std::size_t length, std::optional<Polarity> source_polarity) {
  if (!bundle.layer_slot(layer))
    throw Error(ErrorKind::out_of_range, "layer " + std::to_string(layer) + " not in bundle");
  if (length == 0) throw Error(ErrorKind::invalid_argument, "meta prompt length must be >= 1");
  if (length > bundle.vocab_size)
    throw Error(ErrorKind::out_of_range, "meta prompt length exceeds vocabulary size");
  if (mean_vec.size() != bundle.hidden_dim)
    throw Error(ErrorKind::dimension_mismatch, "mean vector has dimension " +
                                                   std::to_string(mean_vec.size()) + ", bundle d is " +
                                                   std::to_string(bundle.hidden_dim));

  const auto u = bundle.unembedding_view();
  std::vector<double> logits(u.rows, 0.0);
  for (std::size_t v = 0; v < u.rows; ++v) {
    const auto row = u.row(v);
    double acc = 0.0;
    for (std::size_t k = 0; k < u.cols; ++k) acc += static_cast<double>(row[k]) * mean_vec[k];
    logits[v] = acc;
  }

  std::vector<std::int64_t> order(u.rows);
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(length), order.end(),
                    [&](std::int64_t a, std::int64_t b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;
                    });

  MetaPrompt meta;
  meta.layer = layer;
  meta.source_polarity = source_polarity;
  meta.token_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(length));
  for (auto id : meta.token_ids) meta.text += bundle.vocab[static_cast<std::size_t>(id)];
  return meta;
}

MetaPrompt decode_family(const TensorBundle& bundle, std::span<const std::size_t> prompt_indices,
                         int layer, Pooling pooling, std::size_t length,
                         std::optional<Polarity> source_polarity) {
  std::vector<std::vector<double>> pooled;
  pooled.reserve(prompt_indices.size());
  for (auto p : prompt_indices) pooled.push_back(pool_prompt(bundle.hidden(p, layer), pooling));
  const auto mean = mean_vector(pooled);
  return decode_meta(mean, bundle, layer, length, source_polarity);
}

std::vector<TokenWeight> token_importance(const TensorBundle& bundle, std::size_t prompt_index,
                                          AttentionMode mode) {
  if (prompt_index >= bundle.prompts.size())
    throw Error(ErrorKind::out_of_range, "prompt index " + std::to_string(prompt_index) + " out of range");
  const auto& prompt = bundle.prompts[prompt_index];
  if (!prompt.attention)
    throw Error(ErrorKind::missing_attention,
                "prompt " + std::to_string(prompt_index) + " carries no attention tensor");
  if (bundle.heads == 0) throw Error(ErrorKind::missing_attention, "bundle has no attention heads");
  const std::size_t n = prompt.seq_len();

  std::vector<double> matrix;
  if (mode == AttentionMode::last_layer_received) {
    matrix = head_average(bundle, prompt_index, bundle.layers.size() - 1);
  } else {
    // Later layers multiply from the left: R = A_last ... A_first.
    matrix = head_average(bundle, prompt_index, 0);
    for (std::size_t slot = 1; slot < bundle.layers.size(); ++slot) {
      const auto a = head_average(bundle, prompt_index, slot);
      std::vector<double> next(n * n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = a[i * n + k];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) next[i * n + j] += aik * matrix[k * n + j];
        }
      matrix = std::move(next);
    }
  }

  std::vector<double> received(matrix.begin() + static_cast<std::ptrdiff_t>((n - 1) * n),
                               matrix.end());
  const double peak = *std::max_element(received.begin(), received.end());
  std::vector<TokenWeight> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double w = peak > 0.0 ? std::clamp(received[j] / peak, 0.0, 1.0) : 0.0;
    out.push_back({bundle.vocab[static_cast<std::size_t>(prompt.token_ids[j])], w});
  }
  return out;
}

std::string render_heatmap(std::span<const TokenWeight> tokens, HeatmapFormat format) {
  for (const auto& t : tokens) {
    if (!(t.weight >= 0.0 && t.weight <= 1.0))
      throw Error(ErrorKind::out_of_range,
                  "weight " + format_double(t.weight) + " for token '" + t.token + "' outside [0, 1]");
  }
  std::string out;
  switch (format) {
    case HeatmapFormat::csv:
      out = "token,weight\n";
      for (const auto& t : tokens) out += csv_field(t.token) + "," + format_double(t.weight) + "\n";
      break;
    case HeatmapFormat::ansi:
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto c = ramp(tokens[i].weight);
        if (i > 0) out += ' ';
        out += "\x1b[48;2;" + std::to_string(c.r) + ";" + std::to_string(c.g) + ";" +
               std::to_string(c.b) + "m";
        out += tokens[i].weight > 0.5 ? "\x1b[97m" : "\x1b[30m";
        out += tokens[i].token;
        out += "\x1b[0m";
      }
      out += '\n';
      break;
    case HeatmapFormat::html:
      out = "<div class=\"emostim-heatmap\">";
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto c = ramp(tokens[i].weight);
        if (i > 0) out += ' ';
        out += "<span style=\"background-color:rgb(" + std::to_string(c.r) + "," +
               std::to_string(c.g) + "," + std::to_string(c.b) + ");color:" +
               (tokens[i].weight > 0.5 ? "#fff" : "#000") + "\" title=\"" +
               format_double(tokens[i].weight) + "\">" + html_escape(tokens[i].token) + "</span>";
      }
      out += "</div>\n";
      break;
  }
  return out;
}

}  // namespace emostim
