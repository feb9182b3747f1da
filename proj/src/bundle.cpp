#include "emostim/bundle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "emostim/error.hpp"

namespace emostim {

namespace {

constexpr double kRowSumTolerance = 1e-3;

[[noreturn]] void corrupt(const std::string& what) {
  throw Error(ErrorKind::corrupt_bundle, what);
}

std::vector<float> read_floats(const std::filesystem::path& dir, const std::string& name,
                               std::size_t expected_count, std::uint64_t recorded_bytes) {
  const std::uint64_t expected_bytes = expected_count * sizeof(float);
  if (recorded_bytes != expected_bytes)
    corrupt(name + ": manifest records " + std::to_string(recorded_bytes) +
            " bytes, shape requires " + std::to_string(expected_bytes));
  const auto path = dir / name;
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) corrupt(name + ": blob file missing");
  if (size != expected_bytes)
    corrupt(name + ": file has " + std::to_string(size) + " bytes, expected " +
            std::to_string(expected_bytes));
  std::ifstream in(path, std::ios::binary);
  if (!in) corrupt(name + ": cannot open blob");
  std::vector<float> values(expected_count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected_bytes));
  if (!in) corrupt(name + ": short read");
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      bits = __builtin_bswap32(bits);
      std::memcpy(&v, &bits, 4);
    }
  }
  return values;
}

void write_floats(const std::filesystem::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (float v : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      bits = __builtin_bswap32(bits);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  } else {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

void check_finite(std::span<const float> values, const std::string& name) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      corrupt(name + ": non-finite value at element " + std::to_string(i));
  }
}

template <typename T>
T get_field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) corrupt(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    corrupt(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

std::string hidden_blob_name(std::size_t prompt, int layer) {
  return "hidden_" + std::to_string(prompt) + "_" + std::to_string(layer) + ".bin";
}

std::string attention_blob_name(std::size_t prompt) {
  return "attn_" + std::to_string(prompt) + ".bin";
}

std::optional<std::size_t> TensorBundle::layer_slot(int layer) const {
  auto it = std::find(layers.begin(), layers.end(), layer);
  if (it == layers.end()) return std::nullopt;
  return static_cast<std::size_t>(it - layers.begin());
}

MatrixView TensorBundle::hidden(std::size_t prompt, int layer) const {
  if (prompt >= prompts.size())
    throw Error(ErrorKind::out_of_range, "prompt index " + std::to_string(prompt) + " out of range");
  const auto slot = layer_slot(layer);
  if (!slot) throw Error(ErrorKind::out_of_range, "layer " + std::to_string(layer) + " not in bundle");
  const auto& p = prompts[prompt];
  return {p.hidden[*slot], p.seq_len(), hidden_dim};
}

MatrixView TensorBundle::attention(std::size_t prompt, std::size_t slot, std::size_t head) const {
  if (prompt >= prompts.size())
    throw Error(ErrorKind::out_of_range, "prompt index " + std::to_string(prompt) + " out of range");
  const auto& p = prompts[prompt];
  if (!p.attention)
    throw Error(ErrorKind::missing_attention,
                "prompt " + std::to_string(prompt) + " carries no attention tensor");
  if (slot >= layers.size() || head >= heads)
    throw Error(ErrorKind::out_of_range, "attention layer/head out of range");
  const std::size_t n = p.seq_len();
  std::span<const float> all(*p.attention);
  return {all.subspan((slot * heads + head) * n * n, n * n), n, n};
}

void TensorBundle::validate() const {
  if (hidden_dim == 0) corrupt("manifest: d must be positive");
  if (vocab_size == 0) corrupt("manifest: V must be positive");
  if (vocab.size() != vocab_size)
    corrupt("manifest: vocab has " + std::to_string(vocab.size()) + " entries, V is " +
            std::to_string(vocab_size));
  if (layers.empty()) corrupt("manifest: no layers");
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (layers[i] <= layers[i - 1]) corrupt("manifest: layers must be strictly ascending");
  if (layers.front() < 0) corrupt("manifest: negative layer index");
  if (unembedding.size() != vocab_size * hidden_dim)
    corrupt(std::string(kUnembedBlobName) + ": wrong element count");
  check_finite(unembedding, kUnembedBlobName);

  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const auto& prompt = prompts[p];
    const std::string where = "prompt " + std::to_string(p);
    if (prompt.token_ids.empty()) corrupt(where + ": no tokens");
    for (auto id : prompt.token_ids)
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
        corrupt(where + ": token id " + std::to_string(id) + " outside vocabulary");
    if (!prompt.offsets.empty() && prompt.offsets.size() != prompt.seq_len())
      corrupt(where + ": offsets length differs from token count");
    if (prompt.hidden.size() != layers.size())
      corrupt(where + ": hidden states for " + std::to_string(prompt.hidden.size()) +
              " layers, manifest lists " + std::to_string(layers.size()));
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto name = hidden_blob_name(p, layers[k]);
      if (prompt.hidden[k].size() != prompt.seq_len() * hidden_dim)
        corrupt(name + ": wrong element count");
      check_finite(prompt.hidden[k], name);
    }
    if (prompt.attention) {
      const auto name = attention_blob_name(p);
      const std::size_t n = prompt.seq_len();
      if (heads == 0) corrupt(name + ": attention present but heads is 0");
      if (prompt.attention->size() != layers.size() * heads * n * n)
        corrupt(name + ": wrong element count");
      check_finite(*prompt.attention, name);
      const auto& a = *prompt.attention;
      for (std::size_t r = 0; r < layers.size() * heads * n; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const float v = a[r * n + c];
          if (v < 0.0f) corrupt(name + ": negative attention weight in row " + std::to_string(r));
          sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTolerance)
          corrupt(name + ": attention row " + std::to_string(r) + " sums to " +
                  std::to_string(sum));
      }
    }
  }
}

nlohmann::ordered_json bundle_manifest(const TensorBundle& b) {
  nlohmann::ordered_json m;
  m["schema"] = 1;
  m["model_id"] = b.model_id;
  m["dtype"] = "float32-le";
  m["d"] = b.hidden_dim;
  m["V"] = b.vocab_size;
  m["layers"] = b.layers;
  m["heads"] = b.heads;
  if (b.tokenizer_hash) m["tokenizer_hash"] = *b.tokenizer_hash;
  m["vocab"] = b.vocab;
  auto& prompts = m["prompts"] = nlohmann::ordered_json::array();
  nlohmann::ordered_json blobs;
  blobs[kUnembedBlobName] = b.unembedding.size() * sizeof(float);
  for (std::size_t p = 0; p < b.prompts.size(); ++p) {
    const auto& prompt = b.prompts[p];
    nlohmann::ordered_json pj;
    pj["text"] = prompt.text;
    pj["token_ids"] = prompt.token_ids;
    if (!prompt.offsets.empty()) {
      auto& offsets = pj["offsets"] = nlohmann::ordered_json::array();
      for (const auto& [begin, end] : prompt.offsets) offsets.push_back({begin, end});
    }
    prompts.push_back(std::move(pj));
    for (std::size_t k = 0; k < b.layers.size(); ++k)
      blobs[hidden_blob_name(p, b.layers[k])] = prompt.hidden[k].size() * sizeof(float);
    if (prompt.attention) blobs[attention_blob_name(p)] = prompt.attention->size() * sizeof(float);
  }
  m["blobs"] = std::move(blobs);
  return m;
}

void write_bundle(const TensorBundle& b, const std::filesystem::path& dir) {
  b.validate();
  std::filesystem::create_directories(dir);
  write_floats(dir / kUnembedBlobName, b.unembedding);
  for (std::size_t p = 0; p < b.prompts.size(); ++p) {
    const auto& prompt = b.prompts[p];
    for (std::size_t k = 0; k < b.layers.size(); ++k)
      write_floats(dir / hidden_blob_name(p, b.layers[k]), prompt.hidden[k]);
    if (prompt.attention) write_floats(dir / attention_blob_name(p), *prompt.attention);
  }
  std::ofstream out(dir / kManifestName, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write manifest in " + dir.string());
  out << bundle_manifest(b).dump(2) << '\n';
  if (!out) throw Error(ErrorKind::io, "failed writing manifest in " + dir.string());
}

BundleReadResult read_bundle(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestName;
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string(kManifestName) + ": " + e.what());
  }
  if (!m.is_object()) corrupt(std::string(kManifestName) + ": not an object");

  BundleReadResult result;
  auto& b = result.bundle;
  const std::string where = kManifestName;
  if (get_field<int>(m, "schema", where) != 1) corrupt(where + ": schema must be 1");
  if (m.contains("dtype") && m["dtype"] != "float32-le" && m["dtype"] != "float32")
    corrupt(where + ": unsupported dtype");
  b.model_id = get_field<std::string>(m, "model_id", where);
  const auto d = get_field<std::int64_t>(m, "d", where);
  const auto v = get_field<std::int64_t>(m, "V", where);
  if (d <= 0 || v <= 0) corrupt(where + ": d and V must be positive");
  b.hidden_dim = static_cast<std::size_t>(d);
  b.vocab_size = static_cast<std::size_t>(v);
  const auto heads = m.contains("heads") ? get_field<std::int64_t>(m, "heads", where) : 0;
  if (heads < 0) corrupt(where + ": heads must be >= 0");
  b.heads = static_cast<std::size_t>(heads);
  if (!m.contains("layers")) corrupt(where + ": missing field 'layers'");
  if (m["layers"].is_number_integer()) {
    const auto count = m["layers"].get<std::int64_t>();
    if (count <= 0) corrupt(where + ": layers must be positive");
    for (int i = 0; i < count; ++i) b.layers.push_back(i);
  } else {
    b.layers = get_field<std::vector<int>>(m, "layers", where);
  }
  if (m.contains("tokenizer_hash")) b.tokenizer_hash = get_field<std::string>(m, "tokenizer_hash", where);
  b.vocab = get_field<std::vector<std::string>>(m, "vocab", where);
  if (b.vocab.size() != b.vocab_size)
    corrupt(where + ": vocab has " + std::to_string(b.vocab.size()) + " entries, V is " +
            std::to_string(b.vocab_size));

  if (!m.contains("blobs") || !m["blobs"].is_object()) corrupt(where + ": missing 'blobs' table");
  std::map<std::string, std::uint64_t> recorded;
  for (const auto& [name, bytes] : m["blobs"].items()) {
    if (!bytes.is_number_unsigned() && !bytes.is_number_integer())
      corrupt(name + ": byte length is not an integer");
    recorded[name] = bytes.get<std::uint64_t>();
  }
  std::set<std::string> used;
  auto blob = [&](const std::string& name, std::size_t count) {
    auto it = recorded.find(name);
    if (it == recorded.end()) corrupt(name + ": not listed in manifest blobs");
    used.insert(name);
    return read_floats(dir, name, count, it->second);
  };

  b.unembedding = blob(kUnembedBlobName, b.vocab_size * b.hidden_dim);

  const auto& prompts = m.contains("prompts") ? m["prompts"] : nlohmann::json::array();
  if (!prompts.is_array()) corrupt(where + ": 'prompts' must be an array");
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const auto& pj = prompts[p];
    const std::string pwhere = where + ": prompt " + std::to_string(p);
    BundlePrompt prompt;
    prompt.text = get_field<std::string>(pj, "text", pwhere);
    prompt.token_ids = get_field<std::vector<std::int64_t>>(pj, "token_ids", pwhere);
    if (prompt.token_ids.empty()) corrupt(pwhere + ": no tokens");
    if (pj.contains("offsets")) {
      for (const auto& o : pj["offsets"]) {
        if (!o.is_array() || o.size() != 2) corrupt(pwhere + ": offsets must be [begin, end] pairs");
        prompt.offsets.emplace_back(o[0].get<std::int64_t>(), o[1].get<std::int64_t>());
      }
    }
    const std::size_t n = prompt.seq_len();
    for (int layer : b.layers) prompt.hidden.push_back(blob(hidden_blob_name(p, layer), n * b.hidden_dim));
    const auto attn = attention_blob_name(p);
    if (recorded.contains(attn)) prompt.attention = blob(attn, b.layers.size() * b.heads * n * n);
    b.prompts.push_back(std::move(prompt));
  }

  for (const auto& [name, bytes] : recorded)
    if (!used.contains(name)) result.warnings.push_back("unreferenced blob " + name);
  static const std::set<std::string> known{"schema", "model_id", "dtype", "d",      "V",
                                           "layers", "heads",    "tokenizer_hash",  "vocab",
                                           "prompts", "blobs"};
  for (const auto& [key, value] : m.items())
    if (!known.contains(key)) result.warnings.push_back("unknown manifest field '" + key + "'");

  b.validate();
  return result;
}

}  // namespace emostim
