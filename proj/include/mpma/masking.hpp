#pragma once

// Masking pipeline: random mask plans over index sets, image patchification,
// and report token masking. All randomness comes through the caller's
// generator so plans replay exactly from a seed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mpma/rng.hpp"
#include "mpma/tensor.hpp"

namespace mpma {

struct MaskPlan {
  std::size_t total = 0;
  std::vector<std::size_t> masked;   // sorted
  std::vector<std::size_t> visible;  // sorted
};

// Masked count = round(ratio * total), clamped so that at least one index
// is masked and at least one stays visible.
inline std::size_t masked_count(std::size_t total, double ratio) {
  if (total < 2) throw std::invalid_argument("mask plan needs at least 2 positions");
  if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("mask ratio outside [0,1]");
  auto n = static_cast<std::size_t>(std::llround(ratio * double(total)));
  return std::clamp<std::size_t>(n, 1, total - 1);
}

inline MaskPlan make_mask_plan(std::size_t total, double ratio, SplitMix64& rng) {
  const std::size_t n_mask = masked_count(total, ratio);
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = total - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.below(i + 1)]);
  MaskPlan plan;
  plan.total = total;
  plan.masked.assign(perm.begin(), perm.begin() + n_mask);
  plan.visible.assign(perm.begin() + n_mask, perm.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

// ---------------------------------------------------------------------------
// Image patchification
// ---------------------------------------------------------------------------

struct PatchGrid {
  std::size_t channels, height, width, patch;
  std::size_t rows() const { return height / patch; }
  std::size_t cols() const { return width / patch; }
  std::size_t count() const { return rows() * cols(); }
  std::size_t dim() const { return patch * patch * channels; }

  PatchGrid(std::size_t c, std::size_t h, std::size_t w, std::size_t p)
      : channels(c), height(h), width(w), patch(p) {
    if (p == 0 || h % p != 0 || w % p != 0)
      throw std::invalid_argument("image extent not divisible by patch size");
  }
};

// [C x H x W] pixels (channel-major) -> [N_p x P*P*C] rows, patches in
// row-major grid order, each row laid out (channel, py, px).
template <class T>
std::vector<T> patchify(const std::vector<T>& pixels, const PatchGrid& g) {
  if (pixels.size() != g.channels * g.height * g.width)
    throw std::invalid_argument("patchify: pixel count does not match grid");
  std::vector<T> out(g.count() * g.dim());
  std::size_t r = 0;
  for (std::size_t gy = 0; gy < g.rows(); ++gy)
    for (std::size_t gx = 0; gx < g.cols(); ++gx, ++r) {
      std::size_t k = 0;
      for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t py = 0; py < g.patch; ++py)
          for (std::size_t px = 0; px < g.patch; ++px, ++k) {
            const std::size_t y = gy * g.patch + py, x = gx * g.patch + px;
            out[r * g.dim() + k] = pixels[(c * g.height + y) * g.width + x];
          }
    }
  return out;
}

template <class T>
std::vector<T> unpatchify(const std::vector<T>& patches, const PatchGrid& g) {
  if (patches.size() != g.count() * g.dim())
    throw std::invalid_argument("unpatchify: element count does not match grid");
  std::vector<T> out(g.channels * g.height * g.width);
  std::size_t r = 0;
  for (std::size_t gy = 0; gy < g.rows(); ++gy)
    for (std::size_t gx = 0; gx < g.cols(); ++gx, ++r) {
      std::size_t k = 0;
      for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t py = 0; py < g.patch; ++py)
          for (std::size_t px = 0; px < g.patch; ++px, ++k) {
            const std::size_t y = gy * g.patch + py, x = gx * g.patch + px;
            out[(c * g.height + y) * g.width + x] = patches[r * g.dim() + k];
          }
    }
  return out;
}

// Visible-row view of a patch matrix under a plan.
template <class T>
Tensor<T> apply_image_mask(const Tensor<T>& patches, const MaskPlan& plan) {
  if (patches.rows() != plan.total)
    throw std::invalid_argument("apply_image_mask: plan and patch count disagree");
  return take_rows(patches, plan.visible);
}

// ---------------------------------------------------------------------------
// Report token masking
// ---------------------------------------------------------------------------

struct MaskedReport {
  std::vector<std::size_t> ids;        // input sequence with mask token substituted
  std::vector<std::size_t> targets;    // original ids at masked positions
  std::vector<std::size_t> positions;  // absolute masked positions, sorted
};

// Candidate positions for masking: non-pad tokens, optionally excluding the
// leading classification token.
inline std::vector<std::size_t> maskable_positions(const std::vector<std::size_t>& ids,
                                                   std::size_t pad_id, std::size_t cls_id,
                                                   bool cls_maskable) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == pad_id) continue;
    if (!cls_maskable && ids[i] == cls_id) continue;
    pool.push_back(i);
  }
  return pool;
}

inline MaskedReport apply_report_mask(const std::vector<std::size_t>& ids,
                                      const std::vector<std::size_t>& pool, double ratio,
                                      std::size_t mask_id, SplitMix64& rng) {
  const MaskPlan plan = make_mask_plan(pool.size(), ratio, rng);
  MaskedReport out;
  out.ids = ids;
  out.positions.reserve(plan.masked.size());
  for (std::size_t k : plan.masked) out.positions.push_back(pool[k]);
  std::sort(out.positions.begin(), out.positions.end());
  out.targets.reserve(out.positions.size());
  for (std::size_t p : out.positions) {
    out.targets.push_back(ids[p]);
    out.ids[p] = mask_id;
  }
  return out;
}

}  // namespace mpma
