#include <doctest.h>

#include <cstring>

#include "emostim/bundle.hpp"
#include "support.hpp"

using namespace emostim;
namespace fs = std::filesystem;

namespace {

TensorBundle small_bundle() {
  SeededRng rng(99);
  return testing::random_bundle(rng, 4, 8, {0, 2}, 2, {3, 2});
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = testing::read_file(e.path());
  return files;
}

void truncate_file(const fs::path& p, std::size_t drop) {
  const auto s = testing::read_file(p);
  testing::write_file(p, s.substr(0, s.size() - drop));
}

void poke_float(const fs::path& p, std::size_t index, float value) {
  auto s = testing::read_file(p);
  std::memcpy(s.data() + index * 4, &value, 4);
  testing::write_file(p, s);
}

nlohmann::ordered_json load_manifest(const fs::path& dir) {
  return nlohmann::ordered_json::parse(testing::read_file(dir / kManifestName));
}

void save_manifest(const fs::path& dir, const nlohmann::ordered_json& m) {
  testing::write_file(dir / kManifestName, m.dump(2) + "\n");
}

}  // namespace

TEST_CASE("blob names") {
  CHECK(hidden_blob_name(1, 12) == "hidden_1_12.bin");
  CHECK(attention_blob_name(3) == "attn_3.bin");
}

TEST_CASE("write then read is lossless and byte stable") {
  testing::TempDir a, b;
  const auto bundle = small_bundle();
  write_bundle(bundle, a.path());
  const auto read = read_bundle(a.path());
  CHECK(read.warnings.empty());
  CHECK(read.bundle.unembedding == bundle.unembedding);
  CHECK(read.bundle.vocab == bundle.vocab);
  CHECK(read.bundle.layers == bundle.layers);
  REQUIRE(read.bundle.prompts.size() == 2);
  CHECK(read.bundle.prompts[1].hidden == bundle.prompts[1].hidden);
  CHECK(read.bundle.prompts[0].attention == bundle.prompts[0].attention);
  write_bundle(read.bundle, b.path());
  CHECK(snapshot(a.path()) == snapshot(b.path()));
}

TEST_CASE("views") {
  const auto bundle = small_bundle();
  CHECK(bundle.layer_slot(2) == 1u);
  CHECK_FALSE(bundle.layer_slot(1).has_value());
  const auto h = bundle.hidden(0, 2);
  CHECK(h.rows == 3);
  CHECK(h.cols == 4);
  CHECK(h.at(2, 3) == bundle.prompts[0].hidden[1][11]);
  const auto a = bundle.attention(0, 1, 1);
  CHECK(a.rows == 3);
  CHECK(a.at(0, 0) == (*bundle.prompts[0].attention)[(1 * 2 + 1) * 9]);
  CHECK(testing::error_kind_of([&] { bundle.hidden(0, 5); }) == ErrorKind::out_of_range);
  CHECK(testing::error_kind_of([&] { bundle.hidden(7, 0); }) == ErrorKind::out_of_range);
}

TEST_CASE("corrupt fixtures are rejected naming the blob") {
  testing::TempDir dir;
  write_bundle(small_bundle(), dir.path());
  std::string expect;

  SUBCASE("truncated unembedding") {
    truncate_file(dir / "unembed.bin", 4);
    expect = "unembed.bin";
  }
  SUBCASE("truncated hidden state") {
    truncate_file(dir / "hidden_1_2.bin", 1);
    expect = "hidden_1_2.bin";
  }
  SUBCASE("missing attention") {
    fs::remove(dir / "attn_0.bin");
    expect = "attn_0.bin";
  }
  SUBCASE("non-finite hidden value") {
    poke_float(dir / "hidden_0_0.bin", 1, std::numeric_limits<float>::quiet_NaN());
    expect = "hidden_0_0.bin";
  }
  SUBCASE("attention row does not sum to one") {
    poke_float(dir / "attn_1.bin", 0, 3.0f);
    expect = "attn_1.bin";
  }
  SUBCASE("manifest byte count disagrees") {
    auto m = load_manifest(dir.path());
    m["blobs"]["hidden_0_2.bin"] = 4;
    save_manifest(dir.path(), m);
    expect = "hidden_0_2.bin";
  }
  SUBCASE("blob missing from manifest") {
    auto m = load_manifest(dir.path());
    m["blobs"].erase("unembed.bin");
    save_manifest(dir.path(), m);
    expect = "unembed.bin";
  }
  SUBCASE("token outside vocabulary") {
    auto m = load_manifest(dir.path());
    m["prompts"][0]["token_ids"][0] = 99;
    save_manifest(dir.path(), m);
    expect = "prompt 0";
  }
  SUBCASE("broken manifest json") {
    testing::write_file(dir / kManifestName, "{\"schema\": 1,");
    expect = kManifestName;
  }
  SUBCASE("wrong dtype") {
    auto m = load_manifest(dir.path());
    m["dtype"] = "float16";
    save_manifest(dir.path(), m);
    expect = "manifest";
  }
  SUBCASE("vocab size mismatch") {
    auto m = load_manifest(dir.path());
    m["V"] = 9;
    save_manifest(dir.path(), m);
    expect = "vocab";
  }

  const auto msg = testing::error_message_of([&] { read_bundle(dir.path()); });
  CAPTURE(msg);
  CHECK(testing::error_kind_of([&] { read_bundle(dir.path()); }) == ErrorKind::corrupt_bundle);
  CHECK(msg.find(expect) != std::string::npos);
}

TEST_CASE("missing manifest is an io error") {
  testing::TempDir dir;
  CHECK(testing::error_kind_of([&] { read_bundle(dir.path()); }) == ErrorKind::io);
}

TEST_CASE("unknown fields and stray blobs warn") {
  testing::TempDir dir;
  write_bundle(small_bundle(), dir.path());
  auto m = load_manifest(dir.path());
  m["producer"] = "bridge";
  m["blobs"]["extra.bin"] = 4;
  save_manifest(dir.path(), m);
  testing::write_file(dir / "extra.bin", std::string(4, '\0'));
  const auto r = read_bundle(dir.path());
  REQUIRE(r.warnings.size() == 2);
  bool named_blob = false, named_field = false;
  for (const auto& w : r.warnings) {
    named_blob |= w.find("extra.bin") != std::string::npos;
    named_field |= w.find("producer") != std::string::npos;
  }
  CHECK(named_blob);
  CHECK(named_field);
}

TEST_CASE("integer layer count is accepted") {
  testing::TempDir dir;
  SeededRng rng(1);
  auto b = testing::random_bundle(rng, 2, 4, {0, 1}, 1, {2});
  write_bundle(b, dir.path());
  auto m = load_manifest(dir.path());
  m["layers"] = 2;
  save_manifest(dir.path(), m);
  CHECK(read_bundle(dir.path()).bundle.layers == std::vector<int>{0, 1});
}

TEST_CASE("bundles without attention") {
  testing::TempDir dir;
  SeededRng rng(2);
  auto b = testing::random_bundle(rng, 3, 5, {4}, 0, {2}, false);
  write_bundle(b, dir.path());
  const auto r = read_bundle(dir.path());
  CHECK_FALSE(r.bundle.prompts[0].attention.has_value());
  CHECK(testing::error_kind_of([&] { r.bundle.attention(0, 0, 0); }) == ErrorKind::missing_attention);
}

TEST_CASE("writer validates before writing") {
  testing::TempDir dir;
  auto b = small_bundle();
  b.unembedding.pop_back();
  CHECK(testing::error_kind_of([&] { write_bundle(b, dir.path()); }) == ErrorKind::corrupt_bundle);
  CHECK_FALSE(fs::exists(dir / kManifestName));
}
