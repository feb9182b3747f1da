#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <regex>
#include <string>
#include <vector>

#include "emostim/bundle.hpp"
#include "emostim/error.hpp"
#include "emostim/gateway.hpp"
#include "emostim/rng.hpp"
#include "emostim/tasks.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("emostim_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class Fn>
emostim::ErrorKind error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const emostim::Error& e) {
    return e.kind();
  }
  throw std::runtime_error("expected an emostim::Error");
}

template <class Fn>
std::string error_message_of(Fn&& fn) {
  try {
    fn();
  } catch (const emostim::Error& e) {
    return e.what();
  }
  return {};
}

// Replies in order; the last reply repeats.
class ScriptedTransport final : public emostim::Transport {
 public:
  using Step = std::function<emostim::HttpReply(const emostim::HttpRequest&)>;

  explicit ScriptedTransport(std::vector<Step> steps) : steps_(std::move(steps)) {}

  static Step reply(int status, std::string body) {
    return [=](const emostim::HttpRequest&) { return emostim::HttpReply{status, body}; };
  }
  static Step fail(emostim::ErrorKind kind) {
    return [=](const emostim::HttpRequest&) -> emostim::HttpReply {
      throw emostim::Error(kind, "scripted failure");
    };
  }

  emostim::HttpReply post(const emostim::HttpRequest& request) override {
    std::size_t i;
    {
      std::lock_guard lock(mu_);
      requests_.push_back(request);
      i = std::min(calls_++, steps_.size() - 1);
    }
    return steps_[i](request);
  }

  std::vector<emostim::HttpRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  std::vector<Step> steps_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
  std::vector<emostim::HttpRequest> requests_;
};

inline std::string ok_body(const std::string& text) {
  nlohmann::json j = {
      {"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
      {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 2}, {"total_tokens", 5}}}};
  return j.dump();
}

// Answers through a callback and records every request.
class FnClient final : public emostim::CompletionClient {
 public:
  using Fn = std::function<std::string(const emostim::CompletionRequest&)>;
  explicit FnClient(Fn fn) : fn_(std::move(fn)) {}

  emostim::ModelResponse complete(const emostim::CompletionRequest& request) override {
    {
      std::lock_guard lock(mu_);
      seen_.push_back(request);
    }
    emostim::ModelResponse r;
    r.text = fn_(request);
    r.provider = "scripted";
    r.http_status = 200;
    r.attempts = 1;
    return r;
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return seen_.size();
  }
  std::vector<emostim::CompletionRequest> seen() const {
    std::lock_guard lock(mu_);
    return seen_;
  }

 private:
  Fn fn_;
  mutable std::mutex mu_;
  std::vector<emostim::CompletionRequest> seen_;
};

// Vocabulary for random sentences.
inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> pool = {
      "the", "man", "woman", "child", "dog", "teacher", "Bob", "Alice", "walks", "reads",
      "a", "book", "in", "park", "with", "her", "his", "friend", "doctor", "girl",
      "boy", "manager", "cat", "garden", "quickly", "city", "mother", "father", "runs", "sings"};
  return pool;
}

// Random bundle with stochastic attention. Rows are normalized in float.
inline emostim::TensorBundle random_bundle(emostim::SeededRng& rng, std::size_t d, std::size_t v,
                                           std::vector<int> layers, std::size_t heads,
                                           std::vector<std::size_t> seq_lens, bool with_attention = true) {
  emostim::TensorBundle b;
  b.model_id = "tiny-test";
  b.hidden_dim = d;
  b.vocab_size = v;
  b.heads = with_attention ? heads : 0;
  b.layers = std::move(layers);
  for (std::size_t i = 0; i < v; ++i) b.vocab.push_back("t" + std::to_string(i));
  b.unembedding.resize(v * d);
  for (auto& x : b.unembedding) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  for (std::size_t n : seq_lens) {
    emostim::BundlePrompt p;
    p.text = "prompt";
    for (std::size_t t = 0; t < n; ++t) p.token_ids.push_back(static_cast<std::int64_t>(rng.below(v)));
    for (std::size_t l = 0; l < b.layers.size(); ++l) {
      std::vector<float> h(n * d);
      for (auto& x : h) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
      p.hidden.push_back(std::move(h));
    }
    if (with_attention) {
      std::vector<float> a(b.layers.size() * heads * n * n);
      for (std::size_t row = 0; row < b.layers.size() * heads * n; ++row) {
        float sum = 0.0f;
        for (std::size_t c = 0; c < n; ++c) {
          a[row * n + c] = static_cast<float>(rng.uniform() + 1e-3);
          sum += a[row * n + c];
        }
        for (std::size_t c = 0; c < n; ++c) a[row * n + c] /= sum;
      }
      p.attention = std::move(a);
    }
    b.prompts.push_back(std::move(p));
  }
  return b;
}

// Brute-force argsort: every index, full comparison sort.
inline std::vector<std::int64_t> argsort_oracle(const std::vector<double>& logits) {
  std::vector<std::int64_t> idx(logits.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
  // Insertion sort keeps the oracle independent of std::sort.
  for (std::size_t i = 1; i < idx.size(); ++i) {
    for (std::size_t j = i; j > 0; --j) {
      const auto a = idx[j - 1], b = idx[j];
      const bool swap = logits[b] > logits[a] || (logits[b] == logits[a] && b < a);
      if (!swap) break;
      std::swap(idx[j - 1], idx[j]);
    }
  }
  return idx;
}

// Independent injection oracle: regex word search on the original, spliced
// right to left.
inline std::string splice_oracle(const std::string& text, const std::vector<std::string>& entities,
                                 const std::string& adjective) {
  std::vector<std::size_t> positions;
  std::vector<std::string> seen;
  for (const auto& e : entities) {
    if (std::find(seen.begin(), seen.end(), e) != seen.end()) continue;
    seen.push_back(e);
    std::string escaped;
    for (char c : e) {
      if (std::string("\\^$.|?*+()[]{}").find(c) != std::string::npos) escaped.push_back('\\');
      escaped.push_back(c);
    }
    const std::regex re("(^|[^A-Za-z0-9])(" + escaped + ")(?![A-Za-z0-9])");
    std::smatch m;
    if (std::regex_search(text, m, re)) {
      const auto pos = static_cast<std::size_t>(m.position(2));
      if (std::find(positions.begin(), positions.end(), pos) == positions.end()) positions.push_back(pos);
    }
  }
  std::sort(positions.rbegin(), positions.rend());
  std::string out = text;
  for (auto p : positions) out.insert(p, adjective + " ");
  return out;
}

}  // namespace testing
