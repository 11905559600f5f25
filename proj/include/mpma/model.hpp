#pragma once

// The four networks and two heads of the pre-training framework:
//  - shared vision encoder (masked pass for reconstruction, full pass for
//    alignment and fusion — one parameter set, two call sites)
//  - vision decoder reconstructing masked patches
//  - report embedding (masked report) and a jointly-trained text encoder
//    stand-in (unmasked report) sharing the token/position tables
//  - memory-augmented cross-modal fusion producing the sequence the text
//    decoder reads masked-token logits from
//  - global/local alignment projection heads
//
// Parameters live in a flat name -> array map. During a training step a
// binding context registers each array on the tape exactly once, so shared
// weights receive gradients from every path that uses them.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpma/masking.hpp"
#include "mpma/nn.hpp"
#include "mpma/rng.hpp"
#include "mpma/tensor.hpp"

namespace mpma {

enum class FusionKind { gap, gmp, cmf, ma_cmf };

inline FusionKind fusion_kind_from_string(const std::string& s) {
  if (s == "gap") return FusionKind::gap;
  if (s == "gmp") return FusionKind::gmp;
  if (s == "cmf") return FusionKind::cmf;
  if (s == "ma_cmf") return FusionKind::ma_cmf;
  throw std::invalid_argument("unknown fusion kind: " + s);
}

inline std::string to_string(FusionKind k) {
  switch (k) {
    case FusionKind::gap: return "gap";
    case FusionKind::gmp: return "gmp";
    case FusionKind::cmf: return "cmf";
    case FusionKind::ma_cmf: return "ma_cmf";
  }
  throw std::logic_error("bad fusion kind");
}

enum class PosKind { learned, sinusoidal };

inline PosKind pos_kind_from_string(const std::string& s) {
  if (s == "learned") return PosKind::learned;
  if (s == "sinusoidal") return PosKind::sinusoidal;
  throw std::invalid_argument("unknown position kind: " + s);
}

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t depth_enc_v = 2;
  std::size_t depth_dec_v = 1;
  std::size_t depth_enc_t = 2;
  std::size_t depth_dec_t = 2;
  std::size_t patch = 4;
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t report_len = 16;   // M
  std::size_t vocab = 64;        // V
  std::size_t memory_slots = 4;  // S
  FusionKind fusion_kind = FusionKind::ma_cmf;
  ScaleMode scale_mode = ScaleMode::per_head;
  PosKind pos_kind = PosKind::learned;
  bool gla_l2_norm = true;            // pool-then-normalize the global vectors
  bool fusion_uses_full_image = true; // fusion reads the full pass (figures' reading)
  double tau1 = 0.1, tau2 = 0.1, tau3 = 0.1;
  double ln_eps = 1e-5;

  std::size_t n_patches() const { return (height / patch) * (width / patch); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  PatchGrid grid() const { return PatchGrid(channels, height, width, patch); }

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0)
      throw std::invalid_argument("model width must be a positive multiple of heads");
    if (patch == 0 || height % patch != 0 || width % patch != 0)
      throw std::invalid_argument("image extents must be divisible by patch size");
    if (report_len < 2) throw std::invalid_argument("report length must be >= 2");
    if (vocab < 5) throw std::invalid_argument("vocabulary too small");
    if (tau1 <= 0 || tau2 <= 0 || tau3 <= 0)
      throw std::invalid_argument("temperatures must be positive");
  }
};

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

template <class T>
using ParamMap = std::map<std::string, Array<T>>;

namespace detail {

template <class T>
Array<T> gaussian_array(Shape s, std::uint64_t seed, T sigma) {
  SplitMix64 rng(seed);
  std::vector<T> v(shape_numel(s));
  for (auto& x : v) x = T(rng.normal()) * sigma;
  return Array<T>(std::move(s), std::move(v));
}

template <class T>
Array<T> const_array(Shape s, T fill) {
  const std::size_t n = shape_numel(s);
  return Array<T>(std::move(s), std::vector<T>(n, fill));
}

}  // namespace detail

// Every array is initialized from a seed mixed with its own name, so the
// draw is independent of creation order and of unrelated config changes.
template <class T>
ParamMap<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamMap<T> P;
  const T sigma = T(0.02);
  const std::size_t d = cfg.d, np = cfg.n_patches(), pd = cfg.patch_dim();

  auto weight = [&](const std::string& name, Shape s) {
    P[name] = detail::gaussian_array<T>(std::move(s), mix_seed(seed, fnv1a64(name)), sigma);
  };
  auto zeros_p = [&](const std::string& name, Shape s) {
    P[name] = detail::const_array<T>(std::move(s), T(0));
  };
  auto ones_p = [&](const std::string& name, Shape s) {
    P[name] = detail::const_array<T>(std::move(s), T(1));
  };
  auto block = [&](const std::string& prefix) {
    ones_p(prefix + ".ln1.g", {d});
    zeros_p(prefix + ".ln1.b", {d});
    weight(prefix + ".attn.wq", {d, d});
    weight(prefix + ".attn.wk", {d, d});
    weight(prefix + ".attn.wv", {d, d});
    weight(prefix + ".attn.wm", {d, d});
    ones_p(prefix + ".ln2.g", {d});
    zeros_p(prefix + ".ln2.b", {d});
    weight(prefix + ".mlp.w1", {d, 4 * d});
    zeros_p(prefix + ".mlp.b1", {4 * d});
    weight(prefix + ".mlp.w2", {4 * d, d});
    zeros_p(prefix + ".mlp.b2", {d});
  };

  weight("patch_proj.w", {pd, d});
  weight("tok.emb", {cfg.vocab, d});
  if (cfg.pos_kind == PosKind::learned) {
    weight("pos.img", {np, d});
    weight("pos.txt", {cfg.report_len, d});
  } else {
    P["pos.img"] = sinusoidal_positions<T>(np, d);
    P["pos.txt"] = sinusoidal_positions<T>(cfg.report_len, d);
  }
  for (std::size_t i = 0; i < cfg.depth_enc_v; ++i) block("enc_v." + std::to_string(i));
  weight("dec_v.mask_tok", {d});
  for (std::size_t i = 0; i < cfg.depth_dec_v; ++i) block("dec_v." + std::to_string(i));
  weight("dec_v.head.w", {d, pd});
  zeros_p("dec_v.head.b", {pd});
  for (std::size_t i = 0; i < cfg.depth_enc_t; ++i) block("enc_t." + std::to_string(i));
  for (std::size_t i = 0; i < cfg.depth_dec_t; ++i) block("dec_t." + std::to_string(i));
  weight("dec_t.head.w", {d, cfg.vocab});
  zeros_p("dec_t.head.b", {cfg.vocab});
  for (const char* side : {"img", "txt"}) {
    const std::string pre = std::string("fus.") + side + ".attn";
    weight(pre + ".wq", {d, d});
    weight(pre + ".wk", {d, d});
    weight(pre + ".wv", {d, d});
    weight(pre + ".wm", {d, d});
  }
  weight("fus.mem_txt", {cfg.memory_slots, d});  // appended to text keys/values
  weight("fus.mem_img", {cfg.memory_slots, d});  // appended to image keys/values
  weight("gla.wv", {cfg.report_len, np});
  weight("gla.wt", {d, d});
  return P;
}

// Names the optimizer must not update: fixed sinusoidal tables, and the
// text-encoder blocks when the stand-in runs in frozen mode.
inline bool param_frozen(const std::string& name, PosKind pos_kind, bool freeze_text_encoder) {
  if (pos_kind == PosKind::sinusoidal && name.rfind("pos.", 0) == 0) return true;
  if (freeze_text_encoder && name.rfind("enc_t.", 0) == 0) return true;
  return false;
}

// Binds parameters onto a tape, memoized by name: two uses of the same
// parameter resolve to one leaf so gradients from all paths accumulate.
// With a null tape the context produces constants (pure evaluation).
template <class T>
struct Ctx {
  Tape<T>* tape = nullptr;
  const ParamMap<T>* params = nullptr;
  std::map<std::string, Tensor<T>> bound;

  Ctx(Tape<T>* tp, const ParamMap<T>& p) : tape(tp), params(&p) {}

  Tensor<T> p(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    auto pit = params->find(name);
    if (pit == params->end()) throw std::invalid_argument("unknown parameter: " + name);
    Tensor<T> t = tape ? tape->leaf(name, pit->second) : constant(pit->second);
    bound.emplace(name, t);
    return t;
  }

  AttentionParams<T> attn(const std::string& prefix) {
    return {p(prefix + ".wq"), p(prefix + ".wk"), p(prefix + ".wv"), p(prefix + ".wm")};
  }

  BlockParams<T> blk(const std::string& prefix) {
    return {p(prefix + ".ln1.g"), p(prefix + ".ln1.b"), attn(prefix + ".attn"),
            p(prefix + ".ln2.g"), p(prefix + ".ln2.b"), p(prefix + ".mlp.w1"),
            p(prefix + ".mlp.b1"), p(prefix + ".mlp.w2"), p(prefix + ".mlp.b2")};
  }
};

// ---------------------------------------------------------------------------
// Network passes
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
Tensor<T> run_stack(Ctx<T>& cx, Tensor<T> x, const std::string& prefix, std::size_t depth,
                    const ModelConfig& cfg) {
  for (std::size_t i = 0; i < depth; ++i)
    x = transformer_block(x, cx.blk(prefix + std::to_string(i)), cfg.heads, cfg.scale_mode,
                          T(cfg.ln_eps));
  return x;
}

}  // namespace detail

// Encoder over visible patches only: project, add the gathered position
// rows, run the shared encoder stack.
template <class T>
Tensor<T> encode_image_masked(Ctx<T>& cx, const Tensor<T>& patches,
                              const std::vector<std::size_t>& visible, const ModelConfig& cfg) {
  if (patches.rows() != cfg.n_patches() || patches.cols() != cfg.patch_dim())
    throw std::invalid_argument("encode_image_masked: patch matrix does not match config");
  auto proj = matmul(take_rows(patches, visible), cx.p("patch_proj.w"));
  auto x = add(proj, take_rows(cx.p("pos.img"), visible));
  return detail::run_stack(cx, x, "enc_v.", cfg.depth_enc_v, cfg);
}

// Same encoder weights over the complete patch sequence.
template <class T>
Tensor<T> encode_image_full(Ctx<T>& cx, const Tensor<T>& patches, const ModelConfig& cfg) {
  if (patches.rows() != cfg.n_patches() || patches.cols() != cfg.patch_dim())
    throw std::invalid_argument("encode_image_full: patch matrix does not match config");
  auto x = add(matmul(patches, cx.p("patch_proj.w")), cx.p("pos.img"));
  return detail::run_stack(cx, x, "enc_v.", cfg.depth_enc_v, cfg);
}

// Restore the full sequence (encoded rows at visible slots, the shared mask
// token at masked slots), re-add positions everywhere, decode, and project
// the masked slots back to pixel space. Rows come out in ascending
// masked-index order.
template <class T>
Tensor<T> decode_image(Ctx<T>& cx, const Tensor<T>& encoded_visible, const MaskPlan& plan,
                       const ModelConfig& cfg) {
  if (plan.total != cfg.n_patches())
    throw std::invalid_argument("decode_image: plan does not match config");
  if (encoded_visible.rows() != plan.visible.size())
    throw std::invalid_argument("decode_image: encoded rows do not match plan");
  auto vis = scatter_rows(encoded_visible, plan.visible, plan.total);
  auto mask_fill = scatter_rows(tile_rows(cx.p("dec_v.mask_tok"), plan.masked.size()),
                                plan.masked, plan.total);
  auto x = add(add(vis, mask_fill), cx.p("pos.img"));
  x = detail::run_stack(cx, x, "dec_v.", cfg.depth_dec_v, cfg);
  auto masked_feats = take_rows(x, plan.masked);
  return add_rowvec(matmul(masked_feats, cx.p("dec_v.head.w")), cx.p("dec_v.head.b"));
}

// Token + position embedding of a report (typically the masked report).
template <class T>
Tensor<T> embed_report(Ctx<T>& cx, const std::vector<std::size_t>& ids, const ModelConfig& cfg) {
  if (ids.size() != cfg.report_len)
    throw std::invalid_argument("embed_report: report length does not match config");
  for (std::size_t id : ids)
    if (id >= cfg.vocab) throw std::invalid_argument("embed_report: token id out of range");
  return add(embedding(cx.p("tok.emb"), ids), cx.p("pos.txt"));
}

// Text-encoder stand-in over the unmasked report: shared embedding tables,
// then its own block stack.
template <class T>
Tensor<T> encode_report(Ctx<T>& cx, const std::vector<std::size_t>& ids, const ModelConfig& cfg) {
  auto x = embed_report(cx, ids, cfg);
  return detail::run_stack(cx, x, "enc_t.", cfg.depth_enc_t, cfg);
}

template <class T>
struct Fused {
  Tensor<T> seq;                   // [L_C x d]
  std::size_t report_offset = 0;   // row index where the report segment starts
};

// Cross-modal fusion. The attention variants exchange information in both
// directions, optionally with learnable memory rows extending each
// key/value sequence; the pooling variants prepend one pooled image row to
// the report embedding. The plain cross-attention variant is the memory
// variant with an empty memory, through the identical code path.
template <class T>
Fused<T> fuse(Ctx<T>& cx, const Tensor<T>& v, const Tensor<T>& e_t, const ModelConfig& cfg) {
  if (v.cols() != cfg.d || e_t.cols() != cfg.d)
    throw std::invalid_argument("fuse: feature widths do not match config");
  switch (cfg.fusion_kind) {
    case FusionKind::gap:
      return {concat<T>({stack_rows<T>({mean_axis(v, 0)}), e_t}, 0), 1};
    case FusionKind::gmp:
      return {concat<T>({stack_rows<T>({max_axis0(v)}), e_t}, 0), 1};
    case FusionKind::cmf:
    case FusionKind::ma_cmf: {
      const std::size_t eff =
          cfg.fusion_kind == FusionKind::ma_cmf ? cfg.memory_slots : 0;
      std::vector<std::size_t> head(eff);
      for (std::size_t i = 0; i < eff; ++i) head[i] = i;
      auto mem_txt = take_rows(cx.p("fus.mem_txt"), head);
      auto mem_img = take_rows(cx.p("fus.mem_img"), head);
      auto c_v = mca_with_memory(v, e_t, mem_txt, cx.attn("fus.img.attn"), cfg.heads,
                                 cfg.scale_mode);
      auto c_et = mca_with_memory(e_t, v, mem_img, cx.attn("fus.txt.attn"), cfg.heads,
                                  cfg.scale_mode);
      return {concat<T>({c_v, c_et}, 0), v.rows()};
    }
  }
  throw std::logic_error("bad fusion kind");
}

// Text decoder over the fused sequence; logits are read at the masked
// report positions (ascending), offset into the report segment.
template <class T>
Tensor<T> decode_report(Ctx<T>& cx, const Fused<T>& fused,
                        const std::vector<std::size_t>& masked_positions,
                        const ModelConfig& cfg) {
  if (masked_positions.empty())
    throw std::invalid_argument("decode_report: no masked positions");
  auto x = detail::run_stack(cx, fused.seq, "dec_t.", cfg.depth_dec_t, cfg);
  std::vector<std::size_t> rows;
  rows.reserve(masked_positions.size());
  for (std::size_t p : masked_positions) {
    if (p >= cfg.report_len)
      throw std::invalid_argument("decode_report: masked position outside report");
    rows.push_back(fused.report_offset + p);
  }
  auto feats = take_rows(x, rows);
  return add_rowvec(matmul(feats, cx.p("dec_t.head.w")), cx.p("dec_t.head.b"));
}

template <class T>
struct GlaOut {
  Tensor<T> v_global, t_global;  // [d], pooled (and optionally normalized)
  Tensor<T> s;                   // [N_p x M] region-word similarities
  Tensor<T> alpha;               // [N_p x M] column-normalized coefficients
  Tensor<T> t_m;                 // [M x d] projected word features
};

// Alignment heads: project image tokens across the token axis and report
// tokens across the feature axis, pool to global vectors, and form the
// region-word similarity matrix from unprojected image rows.
template <class T>
GlaOut<T> gla_heads(Ctx<T>& cx, const Tensor<T>& v, const Tensor<T>& t, const ModelConfig& cfg) {
  if (v.rows() != cfg.n_patches() || v.cols() != cfg.d)
    throw std::invalid_argument("gla_heads: image features do not match config");
  if (t.rows() != cfg.report_len || t.cols() != cfg.d)
    throw std::invalid_argument("gla_heads: report features do not match config");
  auto v_m = matmul(cx.p("gla.wv"), v);            // [M x d]
  auto t_m = matmul(t, transpose(cx.p("gla.wt"))); // [M x d]
  auto v_g = mean_axis(v_m, 0);
  auto t_g = mean_axis(t_m, 0);
  if (cfg.gla_l2_norm) {
    v_g = l2_normalize(v_g);
    t_g = l2_normalize(t_g);
  }
  auto s = matmul(v, transpose(t_m));              // [N_p x M]
  auto alpha = softmax(scale(s, T(1) / T(cfg.tau2)), 0);
  return {v_g, t_g, s, alpha, t_m};
}

// ---------------------------------------------------------------------------
// Full per-item forward
// ---------------------------------------------------------------------------

struct ItemInputs {
  std::vector<std::size_t> report_ids;  // unmasked, length M
  MaskPlan img_plan;
  MaskedReport rep;
};

template <class T>
struct ItemOutputs {
  Tensor<T> recon;         // [h x P^2 C] reconstructed masked patches
  Tensor<T> truth;         // matching ground-truth rows (constant)
  Tensor<T> mlm_logits;    // [n x V]
  Tensor<T> v_full;        // [N_p x d] full-pass encoder output
  Tensor<T> v_global, t_global;
  Tensor<T> s, alpha;
  Tensor<T> t_m;           // [M x d]
};

template <class T>
ItemOutputs<T> forward_item(Ctx<T>& cx, const Tensor<T>& patches, const ItemInputs& item,
                            const ModelConfig& cfg) {
  ItemOutputs<T> out;
  auto enc_vis = encode_image_masked(cx, patches, item.img_plan.visible, cfg);
  out.recon = decode_image(cx, enc_vis, item.img_plan, cfg);
  out.truth = take_rows(patches, item.img_plan.masked);  // patches enter as constants

  out.v_full = encode_image_full(cx, patches, cfg);
  auto e_t = embed_report(cx, item.rep.ids, cfg);
  auto fused = fuse(cx, cfg.fusion_uses_full_image ? out.v_full : enc_vis, e_t, cfg);
  out.mlm_logits = decode_report(cx, fused, item.rep.positions, cfg);

  auto t_enc = encode_report(cx, item.report_ids, cfg);
  auto heads = gla_heads(cx, out.v_full, t_enc, cfg);
  out.v_global = heads.v_global;
  out.t_global = heads.t_global;
  out.s = heads.s;
  out.alpha = heads.alpha;
  out.t_m = heads.t_m;
  return out;
}

}  // namespace mpma
