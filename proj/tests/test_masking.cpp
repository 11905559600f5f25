#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mpma/masking.hpp"
#include "mpma/rng.hpp"
#include "mpma/tensor.hpp"

using namespace mpma;

TEST_CASE("mask plans partition the index set with the rounded, clamped count") {
  const double ratios[] = {0.0, 0.15, 0.5, 0.75, 1.0};
  for (std::size_t total = 2; total <= 64; ++total) {
    for (double ratio : ratios) {
      const auto want =
          std::clamp<std::size_t>(std::size_t(std::llround(ratio * double(total))), 1, total - 1);
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SplitMix64 rng(seed * 1000 + total);
        const auto plan = make_mask_plan(total, ratio, rng);
        REQUIRE(plan.total == total);
        REQUIRE(plan.masked.size() == want);
        REQUIRE(plan.visible.size() == total - want);
        REQUIRE(std::is_sorted(plan.masked.begin(), plan.masked.end()));
        REQUIRE(std::is_sorted(plan.visible.begin(), plan.visible.end()));
        std::set<std::size_t> all(plan.masked.begin(), plan.masked.end());
        all.insert(plan.visible.begin(), plan.visible.end());
        REQUIRE(all.size() == total);
        REQUIRE(*all.begin() == 0);
        REQUIRE(*all.rbegin() == total - 1);
      }
    }
  }
}

TEST_CASE("a 196-patch grid at ratio 0.75 masks 147 and keeps 49 visible") {
  SplitMix64 rng(7);
  const auto plan = make_mask_plan(196, 0.75, rng);
  CHECK(plan.masked.size() == 147);
  CHECK(plan.visible.size() == 49);
}

TEST_CASE("masked_count clamps to keep both sides non-empty") {
  CHECK(masked_count(10, 0.0) == 1);
  CHECK(masked_count(10, 1.0) == 9);
  CHECK(masked_count(2, 0.5) == 1);
  CHECK(masked_count(10, 0.75) == 8);  // llround(7.5) rounds half away from zero
  CHECK_THROWS_AS(masked_count(1, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(masked_count(0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(masked_count(10, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(masked_count(10, 1.1), std::invalid_argument);
}

TEST_CASE("mask plans replay from the seed and vary across seeds") {
  SplitMix64 a(123), b(123), c(124);
  const auto pa = make_mask_plan(32, 0.5, a);
  const auto pb = make_mask_plan(32, 0.5, b);
  const auto pc = make_mask_plan(32, 0.5, c);
  CHECK(pa.masked == pb.masked);
  CHECK(pa.visible == pb.visible);
  CHECK(pa.masked != pc.masked);
}

TEST_CASE("patchify and unpatchify round-trip a two-channel image") {
  PatchGrid g(2, 8, 6, 2);
  CHECK(g.rows() == 4);
  CHECK(g.cols() == 3);
  CHECK(g.count() == 12);
  CHECK(g.dim() == 8);
  std::vector<float> pixels(2 * 8 * 6);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = float(i) * 0.25f;
  const auto patches = patchify(pixels, g);
  REQUIRE(patches.size() == g.count() * g.dim());
  const auto back = unpatchify(patches, g);
  CHECK(back == pixels);
}

TEST_CASE("patch rows follow the (channel, py, px) layout in grid order") {
  // 1-channel 4x4 image with pixel value = linear index; patch 2.
  PatchGrid g(1, 4, 4, 2);
  std::vector<double> pixels(16);
  for (std::size_t i = 0; i < 16; ++i) pixels[i] = double(i);
  const auto patches = patchify(pixels, g);
  // Patch 0 covers pixels (0,0),(0,1),(1,0),(1,1) = 0,1,4,5.
  CHECK(patches[0] == 0.0);
  CHECK(patches[1] == 1.0);
  CHECK(patches[2] == 4.0);
  CHECK(patches[3] == 5.0);
  // Patch 1 is the top-right block: 2,3,6,7.
  CHECK(patches[4] == 2.0);
  CHECK(patches[7] == 7.0);
  // Patch 3 is the bottom-right block: 10,11,14,15.
  CHECK(patches[12] == 10.0);
  CHECK(patches[15] == 15.0);
}

TEST_CASE("patch grid rejects indivisible extents and bad sizes") {
  CHECK_THROWS_AS(PatchGrid(1, 7, 8, 2), std::invalid_argument);
  CHECK_THROWS_AS(PatchGrid(1, 8, 7, 2), std::invalid_argument);
  CHECK_THROWS_AS(PatchGrid(1, 8, 8, 0), std::invalid_argument);
  PatchGrid g(1, 4, 4, 2);
  CHECK_THROWS_AS(patchify(std::vector<double>(15), g), std::invalid_argument);
  CHECK_THROWS_AS(unpatchify(std::vector<double>(15), g), std::invalid_argument);
}

TEST_CASE("apply_image_mask keeps exactly the visible rows") {
  const std::size_t total = 6, dim = 3;
  std::vector<double> v(total * dim);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i);
  auto patches = constant<double>({total, dim}, v);
  SplitMix64 rng(5);
  const auto plan = make_mask_plan(total, 0.5, rng);
  auto vis = apply_image_mask(patches, plan);
  REQUIRE(vis.rows() == plan.visible.size());
  for (std::size_t r = 0; r < plan.visible.size(); ++r)
    for (std::size_t cidx = 0; cidx < dim; ++cidx)
      CHECK(vis.at(r * dim + cidx) == double(plan.visible[r] * dim + cidx));
  const MaskPlan wrong{total + 1, {0}, {1, 2, 3, 4, 5, 6}};
  CHECK_THROWS_AS(apply_image_mask(patches, wrong), std::invalid_argument);
}

TEST_CASE("maskable_positions skips pads and optionally the leading token") {
  // ids: [CLS] w w [PAD] w [PAD] with pad=0, cls=1.
  const std::vector<std::size_t> ids = {1, 7, 8, 0, 9, 0};
  CHECK(maskable_positions(ids, 0, 1, false) == std::vector<std::size_t>{1, 2, 4});
  CHECK(maskable_positions(ids, 0, 1, true) == std::vector<std::size_t>{0, 1, 2, 4});
}

TEST_CASE("apply_report_mask substitutes the mask token and records originals") {
  const std::vector<std::size_t> ids = {1, 10, 11, 12, 13, 14, 0, 0};
  const auto pool = maskable_positions(ids, 0, 1, false);
  REQUIRE(pool.size() == 5);
  SplitMix64 rng(99);
  const std::size_t mask_id = 2;
  const auto m = apply_report_mask(ids, pool, 0.4, mask_id, rng);
  CHECK(m.positions.size() == 2);  // round(0.4 * 5)
  CHECK(std::is_sorted(m.positions.begin(), m.positions.end()));
  REQUIRE(m.targets.size() == m.positions.size());
  for (std::size_t k = 0; k < m.positions.size(); ++k) {
    const std::size_t p = m.positions[k];
    CHECK(std::count(pool.begin(), pool.end(), p) == 1);
    CHECK(m.targets[k] == ids[p]);
    CHECK(m.ids[p] == mask_id);
  }
  // Unmasked positions pass through untouched.
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (std::find(m.positions.begin(), m.positions.end(), i) == m.positions.end())
      CHECK(m.ids[i] == ids[i]);
}

TEST_CASE("report masking never selects pads or the leading token") {
  const std::vector<std::size_t> ids = {1, 20, 21, 22, 23, 24, 25, 0, 0, 0};
  const auto pool = maskable_positions(ids, 0, 1, false);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SplitMix64 rng(seed);
    const auto m = apply_report_mask(ids, pool, 0.5, 2, rng);
    for (std::size_t p : m.positions) {
      CHECK(p != 0);
      CHECK(ids[p] != 0);
    }
    CHECK(m.ids[0] == 1);
    CHECK(m.ids[7] == 0);
  }
}
