#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "mpma/corpus.hpp"
#include "mpma/vocab.hpp"

using namespace mpma;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("mpma_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("corpus generation is byte deterministic") {
  SyntheticWorld w;
  w.seed = 42;
  w.height = 16;
  w.width = 16;
  auto d1 = fresh_dir("det1");
  auto d2 = fresh_dir("det2");
  generate_corpus(d1.string(), 12, w);
  generate_corpus(d2.string(), 12, w);
  for (const char* f : {"images.bin", "reports.txt", "vocab.txt", "manifest.txt"}) {
    INFO(f);
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  // A different seed changes the image bytes.
  SyntheticWorld w2 = w;
  w2.seed = 43;
  auto d3 = fresh_dir("det3");
  generate_corpus(d3.string(), 12, w2);
  CHECK(slurp(d1 / "images.bin") != slurp(d3 / "images.bin"));
}

TEST_CASE("every report names its scene's glyph class") {
  SyntheticWorld w;
  w.seed = 7;
  const auto& shapes = shape_names();
  for (std::size_t i = 0; i < 200; ++i) {
    const auto scene = sample_scene(w, i);
    const auto report = report_for_scene(scene);
    const int lbl = glyph_label(report);
    REQUIRE(lbl >= 0);
    CHECK(std::size_t(lbl) == scene.shape);
    CHECK(report.find(shapes[scene.shape]) != std::string::npos);
  }
}

TEST_CASE("glyph classes are near-uniform over a thousand scenes, any seed") {
  for (std::uint64_t seed : {7ull, 9ull, 123ull}) {
    SyntheticWorld w;
    w.seed = seed;
    std::vector<std::size_t> counts(shape_names().size(), 0);
    for (std::size_t i = 0; i < 1000; ++i) counts[sample_scene(w, i).shape]++;
    // Uniform would be 250 each; require within 5% of uniform.
    for (std::size_t c : counts) {
      CHECK(double(c) >= 237.5);
      CHECK(double(c) <= 262.5);
    }
  }
}

TEST_CASE("rendered scenes stay inside [0,1] and vary across indices") {
  SyntheticWorld w;
  w.seed = 3;
  w.height = 16;
  w.width = 16;
  const auto s0 = sample_scene(w, 0);
  const auto s1 = sample_scene(w, 1);
  const auto img0 = render_scene(w, s0);
  const auto img1 = render_scene(w, s1);
  REQUIRE(img0.size() == w.channels * w.height * w.width);
  for (float v : img0) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(img0 != img1);
  // Re-rendering the same scene reproduces the exact pixels.
  CHECK(render_scene(w, s0) == img0);
}

TEST_CASE("tokenizer: greedy longest match with continuation pieces") {
  Vocabulary v = Vocabulary::with_reserved();
  v.add("un");
  v.add("##render");
  v.add("##able");
  v.add("sky");
  const auto ids = tokenize("unrenderable", v, 8);
  REQUIRE(ids.size() == 8);
  CHECK(ids[0] == Vocabulary::cls_id);
  CHECK(ids[1] == v.id_of("un"));
  CHECK(ids[2] == v.id_of("##render"));
  CHECK(ids[3] == v.id_of("##able"));
  for (std::size_t i = 4; i < 8; ++i) CHECK(ids[i] == Vocabulary::pad_id);
  CHECK(detokenize(ids, v) == "unrenderable");
}

TEST_CASE("tokenizer: empty text, unknown words, truncation") {
  Vocabulary v = Vocabulary::with_reserved();
  v.add("sky");
  v.add("blue");
  const auto empty = tokenize("", v, 4);
  CHECK(empty == std::vector<std::size_t>{Vocabulary::cls_id, 0, 0, 0});
  // A word with no covering pieces collapses to a single [UNK].
  const auto unk = tokenize("xyzzy sky", v, 4);
  CHECK(unk[0] == Vocabulary::cls_id);
  CHECK(unk[1] == Vocabulary::unk_id);
  CHECK(unk[2] == v.id_of("sky"));
  CHECK(unk[3] == Vocabulary::pad_id);
  // Truncation keeps the first m ids.
  const auto trunc = tokenize("sky blue sky blue", v, 3);
  REQUIRE(trunc.size() == 3);
  CHECK(trunc[0] == Vocabulary::cls_id);
  CHECK(trunc[1] == v.id_of("sky"));
  CHECK(trunc[2] == v.id_of("blue"));
}

TEST_CASE("corpus reports tokenize losslessly under the shipped vocabulary") {
  SyntheticWorld w;
  w.seed = 11;
  const Vocabulary v = corpus_vocabulary();
  for (std::size_t i = 0; i < 64; ++i) {
    const auto report = report_for_scene(sample_scene(w, i));
    const auto ids = tokenize(report, v, 16);
    CHECK(detokenize(ids, v) == report);
    for (std::size_t id : ids) {
      CHECK(id < v.size());
      CHECK(id != Vocabulary::mask_id);
      CHECK(id != Vocabulary::unk_id);
    }
  }
}

TEST_CASE("reserved control ids hold their fixed slots") {
  const Vocabulary v = corpus_vocabulary();
  CHECK(v.tokens[0] == "[PAD]");
  CHECK(v.tokens[1] == "[CLS]");
  CHECK(v.tokens[2] == "[MASK]");
  CHECK(v.tokens[3] == "[UNK]");
  CHECK(Vocabulary::pad_id == 0);
  CHECK(Vocabulary::cls_id == 1);
  CHECK(Vocabulary::mask_id == 2);
  CHECK(Vocabulary::unk_id == 3);
  CHECK_THROWS_AS(v.id_of("no-such-token"), std::invalid_argument);
}

TEST_CASE("load_corpus round-trips pixels, reports, and manifest") {
  SyntheticWorld w;
  w.seed = 21;
  w.height = 16;
  w.width = 16;
  auto dir = fresh_dir("roundtrip");
  generate_corpus(dir.string(), 10, w);
  const auto c = load_corpus(dir.string());
  REQUIRE(c.size() == 10);
  CHECK(c.channels == w.channels);
  CHECK(c.height == w.height);
  CHECK(c.width == w.width);
  CHECK(c.manifest.at("seed") == "21");
  CHECK(c.manifest.at("count") == "10");
  for (std::size_t i = 0; i < 10; ++i) {
    const auto scene = sample_scene(w, i);
    const auto pixels = render_scene(w, scene);
    REQUIRE(c.images[i].size() == pixels.size());
    for (std::size_t k = 0; k < pixels.size(); ++k)
      CHECK(std::abs(c.images[i][k] - pixels[k]) <= 1e-7f);
    CHECK(c.reports[i] == report_for_scene(scene));
  }
}

TEST_CASE("load_corpus rejects corrupted image files") {
  SyntheticWorld w;
  w.height = 16;
  w.width = 16;
  auto dir = fresh_dir("corrupt");
  generate_corpus(dir.string(), 4, w);

  SUBCASE("bad magic names the offending file") {
    auto bytes = slurp(dir / "images.bin");
    bytes[0] = 'X';
    std::ofstream(dir / "images.bin", std::ios::binary).write(bytes.data(), bytes.size());
    try {
      load_corpus(dir.string());
      FAIL("expected a throw");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("images.bin") != std::string::npos);
    }
  }

  SUBCASE("truncated pixel payload") {
    auto bytes = slurp(dir / "images.bin");
    bytes.resize(bytes.size() - 13);
    std::ofstream(dir / "images.bin", std::ios::binary).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_corpus(dir.string()), std::runtime_error);
  }

  SUBCASE("report count disagreeing with the image count") {
    std::ofstream(dir / "reports.txt") << "only one line\n";
    CHECK_THROWS_AS(load_corpus(dir.string()), std::runtime_error);
  }

  SUBCASE("missing directory") {
    CHECK_THROWS_AS(load_corpus((dir / "nope").string()), std::runtime_error);
  }
}

TEST_CASE("epoch_order is a deterministic permutation that varies by epoch") {
  const auto a = epoch_order(17, 5, 0);
  const auto b = epoch_order(17, 5, 0);
  const auto c = epoch_order(17, 5, 1);
  const auto d = epoch_order(17, 6, 0);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a != d);
  std::set<std::size_t> seen(a.begin(), a.end());
  CHECK(seen.size() == 17);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 16);
}
