#include <doctest.h>

#include "emostim/decode.hpp"
#include "support.hpp"

using namespace emostim;

namespace {

// 3 tokens, 2 heads, one layer.
TensorBundle three_token_bundle() {
  TensorBundle b;
  b.model_id = "hand";
  b.hidden_dim = 2;
  b.vocab_size = 3;
  b.heads = 2;
  b.layers = {5};
  b.vocab = {"Sum", "two", "numbers"};
  b.unembedding = {1, 0, 0, 1, 1, 1};
  BundlePrompt p;
  p.text = "Sum two numbers";
  p.token_ids = {0, 1, 2};
  p.hidden = {{1, 0, 0, 1, 1, 1}};
  p.attention = std::vector<float>{
      1, 0, 0, 0.5f, 0.5f, 0, 0.2f, 0.3f, 0.5f,   // head 0
      1, 0, 0, 0.5f, 0.5f, 0, 0.6f, 0.2f, 0.2f};  // head 1
  b.prompts.push_back(p);
  return b;
}

TensorBundle two_layer_bundle() {
  auto b = three_token_bundle();
  b.layers = {0, 1};
  b.prompts[0].hidden.push_back(b.prompts[0].hidden[0]);
  const std::vector<float> a0{1, 0, 0, 0.5f, 0.5f, 0, 0.2f, 0.3f, 0.5f};
  const std::vector<float> a1{1, 0, 0, 0.4f, 0.6f, 0, 0.1f, 0.1f, 0.8f};
  std::vector<float> att;
  for (const auto* a : {&a0, &a0, &a1, &a1}) att.insert(att.end(), a->begin(), a->end());
  b.prompts[0].attention = att;
  return b;
}

std::vector<double> logits_of(const TensorBundle& b, const std::vector<double>& v) {
  std::vector<double> out(b.vocab_size, 0.0);
  for (std::size_t t = 0; t < b.vocab_size; ++t)
    for (std::size_t k = 0; k < b.hidden_dim; ++k)
      out[t] += static_cast<double>(b.unembedding[t * b.hidden_dim + k]) * v[k];
  return out;
}

}  // namespace

TEST_CASE("mean_vector") {
  const std::vector<std::vector<double>> vs{{1, 2}, {3, 6}};
  CHECK(mean_vector(vs) == std::vector<double>{2, 4});
  CHECK(testing::error_kind_of([] { mean_vector({}); }) == ErrorKind::invalid_argument);
  const std::vector<std::vector<double>> ragged{{1}, {1, 2}};
  CHECK(testing::error_kind_of([&] { mean_vector(ragged); }) == ErrorKind::dimension_mismatch);
}

TEST_CASE("pooling") {
  const auto b = three_token_bundle();
  const auto h = b.hidden(0, 5);
  const auto mean = pool_prompt(h, Pooling::mean_tokens);
  CHECK(mean[0] == doctest::Approx(2.0 / 3.0));
  CHECK(mean[1] == doctest::Approx(2.0 / 3.0));
  CHECK(pool_prompt(h, Pooling::last_token) == std::vector<double>{1, 1});
}

TEST_CASE("decode_meta on a hand-built unembedding") {
  const auto b = three_token_bundle();
  const std::vector<double> v{2, 1};
  const auto meta = decode_meta(v, b, 5, 3, Polarity::prompt);
  CHECK(meta.token_ids == std::vector<std::int64_t>{2, 0, 1});
  CHECK(meta.text == "numbersSumtwo");
  CHECK(meta.layer == 5);
  CHECK(meta.source_polarity == Polarity::prompt);

  const std::vector<double> tie{1, 1};
  CHECK(decode_meta(tie, b, 5, 3).token_ids == std::vector<std::int64_t>{2, 0, 1});
  CHECK(decode_meta(std::vector<double>{0, 0}, b, 5, 2).token_ids == std::vector<std::int64_t>{0, 1});
}

TEST_CASE("decode_meta errors") {
  const auto b = three_token_bundle();
  const std::vector<double> v{1, 1};
  CHECK(testing::error_kind_of([&] { decode_meta(v, b, 4); }) == ErrorKind::out_of_range);
  CHECK(testing::error_kind_of([&] { decode_meta(v, b, 5, 4); }) == ErrorKind::out_of_range);
  CHECK(testing::error_kind_of([&] { decode_meta(v, b, 5, 0); }) == ErrorKind::invalid_argument);
  CHECK(testing::error_kind_of([&] { decode_meta(std::vector<double>{1}, b, 5, 1); }) ==
        ErrorKind::dimension_mismatch);
}

TEST_CASE("decode_meta agrees with a full argsort") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SeededRng rng(seed);
    const std::size_t d = 1 + rng.below(16), v = 2 + rng.below(63);
    const auto b = testing::random_bundle(rng, d, v, {0}, 1, {1}, false);
    std::vector<double> vec(d);
    for (auto& x : vec) x = rng.uniform() * 2 - 1;
    const std::size_t k = 1 + rng.below(v);
    const auto expected = testing::argsort_oracle(logits_of(b, vec));
    const auto got = decode_meta(vec, b, 0, k).token_ids;
    CAPTURE(seed);
    CHECK(got == std::vector<std::int64_t>(expected.begin(), expected.begin() + static_cast<std::ptrdiff_t>(k)));
  }
}

TEST_CASE("decode_family averages pooled prompts") {
  SeededRng rng(4);
  const auto b = testing::random_bundle(rng, 6, 20, {3, 7}, 1, {4, 2, 5}, false);
  const std::vector<std::size_t> prompts{0, 2};
  const auto meta = decode_family(b, prompts, 7, Pooling::last_token, 5);
  std::vector<std::vector<double>> pooled;
  for (auto p : prompts) pooled.push_back(pool_prompt(b.hidden(p, 7), Pooling::last_token));
  CHECK(meta.token_ids == decode_meta(mean_vector(pooled), b, 7, 5).token_ids);
  CHECK(meta.token_ids.size() == 5);
}

TEST_CASE("last layer attention reproduces hand computation") {
  const auto w = token_importance(three_token_bundle(), 0);
  REQUIRE(w.size() == 3);
  CHECK(w[0].token == "Sum");
  CHECK(w[0].weight == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(w[1].weight == doctest::Approx(0.625).epsilon(1e-6));
  CHECK(w[2].weight == doctest::Approx(0.875).epsilon(1e-6));
}

TEST_CASE("rollout reproduces hand computation") {
  const auto b = two_layer_bundle();
  const auto w = token_importance(b, 0, AttentionMode::rollout);
  CHECK(w[0].weight == doctest::Approx(0.775).epsilon(1e-6));
  CHECK(w[1].weight == doctest::Approx(0.725).epsilon(1e-6));
  CHECK(w[2].weight == doctest::Approx(1.0).epsilon(1e-6));
  const auto last = token_importance(b, 0);
  CHECK(last[0].weight == doctest::Approx(0.125).epsilon(1e-6));
  CHECK(last[2].weight == doctest::Approx(1.0));
}

TEST_CASE("importance bounds on random stochastic tensors") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SeededRng rng(seed);
    const auto b = testing::random_bundle(rng, 2, 10, {0, 1, 2}, 1 + rng.below(4), {1 + rng.below(12)});
    for (auto mode : {AttentionMode::last_layer_received, AttentionMode::rollout}) {
      const auto w = token_importance(b, 0, mode);
      CHECK(w.size() == b.prompts[0].seq_len());
      double peak = 0.0;
      for (const auto& t : w) {
        CHECK(t.weight >= 0.0);
        CHECK(t.weight <= 1.0);
        peak = std::max(peak, t.weight);
      }
      CHECK(peak == 1.0);
    }
  }
}

TEST_CASE("importance errors") {
  SeededRng rng(8);
  const auto b = testing::random_bundle(rng, 2, 5, {0}, 0, {3}, false);
  CHECK(testing::error_kind_of([&] { token_importance(b, 0); }) == ErrorKind::missing_attention);
  CHECK(testing::error_kind_of([&] { token_importance(b, 4); }) == ErrorKind::out_of_range);
}

TEST_CASE("heatmap rendering matches golden files") {
  const std::vector<TokenWeight> tokens{{"Sum", 1.0}, {"the", 0.5}, {"<x>", 0.0}};
  const std::filesystem::path golden(EMOSTIM_GOLDEN_DIR);
  CHECK(render_heatmap(tokens, HeatmapFormat::csv) == testing::read_file(golden / "heatmap.csv"));
  CHECK(render_heatmap(tokens, HeatmapFormat::ansi) == testing::read_file(golden / "heatmap.ansi"));
  CHECK(render_heatmap(tokens, HeatmapFormat::html) == testing::read_file(golden / "heatmap.html"));
}

TEST_CASE("heatmap edge cases") {
  const std::vector<TokenWeight> one{{"a", 0.5}};
  CHECK(render_heatmap(one, HeatmapFormat::csv) == "token,weight\na,0.5\n");
  const std::vector<TokenWeight> quoted{{"a,\"b\"", 0.25}};
  CHECK(render_heatmap(quoted, HeatmapFormat::csv) == "token,weight\n\"a,\"\"b\"\"\",0.25\n");
  CHECK(render_heatmap({}, HeatmapFormat::csv) == "token,weight\n");
  const std::vector<TokenWeight> bad{{"a", 1.5}};
  CHECK(testing::error_kind_of([&] { render_heatmap(bad, HeatmapFormat::ansi); }) == ErrorKind::out_of_range);
  const std::vector<TokenWeight> nan{{"a", std::nan("")}};
  CHECK(testing::error_kind_of([&] { render_heatmap(nan, HeatmapFormat::html); }) == ErrorKind::out_of_range);
}

TEST_CASE("enum parsing") {
  CHECK(parse_pooling("last_token") == Pooling::last_token);
  CHECK(parse_attention_mode("rollout") == AttentionMode::rollout);
  CHECK(parse_heatmap_format("html") == HeatmapFormat::html);
  CHECK(testing::error_kind_of([] { parse_heatmap_format("svg"); }) == ErrorKind::invalid_argument);
}
