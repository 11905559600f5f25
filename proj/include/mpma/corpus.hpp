#pragma once

// Synthetic paired image-report corpus. Each sample is a rendered glyph
// scene (shape x size x intensity x 2x2 region, plus jittered placement,
// a background gradient, and seeded pixel noise) and the sentence that
// describes it. The report is a deterministic function of the scene, so
// image and report carry the same information by construction.
//
// On-disk layout of a corpus directory:
//   images.bin   "MPMC" magic, version, count, extents, precision, raw f32
//   reports.txt  one report per line, aligned with image index
//   vocab.txt    one token per line, line number = id
//   manifest.txt flat key=value description of the generation run

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpma/rng.hpp"
#include "mpma/vocab.hpp"

namespace mpma {

struct SyntheticWorld {
  std::uint64_t seed = 1;
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
};

struct Scene {
  std::size_t shape = 0;      // rectangle, disc, cross, ring
  std::size_t size_cls = 0;   // small, medium, large
  std::size_t bright = 0;     // dim, bright
  std::size_t region = 0;     // row-major 2x2
  double cx = 0, cy = 0;      // jittered center, pixels
  double theta = 0;           // glyph rotation, radians (rendered nuisance)
  std::uint64_t noise_seed = 0;
};

const std::vector<std::string>& shape_names();

// Scene i is a pure function of (world.seed, i).
Scene sample_scene(const SyntheticWorld& world, std::size_t index);
std::vector<float> render_scene(const SyntheticWorld& world, const Scene& scene);
std::string report_for_scene(const Scene& scene);

// The closed vocabulary: reserved ids, the grammar's words, and a
// single-letter subword tail so arbitrary lowercase text still tokenizes.
Vocabulary corpus_vocabulary();

// Glyph class named in a report, or -1 if none is present.
int glyph_label(const std::string& report);

void generate_corpus(const std::string& dir, std::size_t n, const SyntheticWorld& world);

struct LoadedCorpus {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<std::vector<float>> images;  // each C*H*W, values in [0,1]
  std::vector<std::string> reports;
  Vocabulary vocab;
  std::map<std::string, std::string> manifest;
  std::size_t size() const { return images.size(); }
};

LoadedCorpus load_corpus(const std::string& dir);

// Deterministic per-epoch visit order (a seeded shuffle of 0..n-1).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

}  // namespace mpma
