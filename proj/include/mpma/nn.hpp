#pragma once

// Transformer building blocks on top of the autodiff core: multi-head
// cross-attention (optionally with learnable memory rows appended to the
// key/value sequence), pre-norm residual blocks, and positional tables.
//
// Attention projections are packed: one [d x d] matrix per role, sliced
// into per-head column blocks. No attention biases anywhere.

#include <cmath>
#include <string>
#include <vector>

#include "mpma/tensor.hpp"

namespace mpma {

enum class ScaleMode {
  per_head,   // scores / sqrt(d / heads)
  literal_d,  // scores / sqrt(d)
};

inline ScaleMode scale_mode_from_string(const std::string& s) {
  if (s == "per_head") return ScaleMode::per_head;
  if (s == "literal_d") return ScaleMode::literal_d;
  throw std::invalid_argument("unknown scale mode: " + s);
}

template <class T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wm;  // each [d x d]
};

// Multi-head cross-attention: queries from q_in [Nq x d], keys/values from
// kv_in [Nk x d]. Self-attention is the q_in == kv_in special case.
template <class T>
Tensor<T> mca(const Tensor<T>& q_in, const Tensor<T>& kv_in, const AttentionParams<T>& p,
              std::size_t heads, ScaleMode mode) {
  const std::size_t d = q_in.cols();
  if (kv_in.cols() != d) throw std::invalid_argument("mca: query/key widths differ");
  if (heads == 0 || d % heads != 0)
    throw std::invalid_argument("mca: model width " + std::to_string(d) +
                                " not divisible by heads " + std::to_string(heads));
  const std::size_t dh = d / heads;
  const T inv_scale = mode == ScaleMode::per_head ? T(1) / T(std::sqrt(double(dh)))
                                                  : T(1) / T(std::sqrt(double(d)));
  auto Q = matmul(q_in, p.wq);
  auto K = matmul(kv_in, p.wk);
  auto V = matmul(kv_in, p.wv);
  std::vector<Tensor<T>> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto Qh = slice_cols(Q, h * dh, (h + 1) * dh);
    auto Kh = slice_cols(K, h * dh, (h + 1) * dh);
    auto Vh = slice_cols(V, h * dh, (h + 1) * dh);
    auto scores = scale(matmul(Qh, transpose(Kh)), inv_scale);
    head_outs.push_back(matmul(softmax(scores, 1), Vh));
  }
  auto merged = heads == 1 ? head_outs[0] : concat(head_outs, 1);
  return matmul(merged, p.wm);
}

// Cross-attention whose key/value sequence is extended with learnable
// memory rows [S x d]. S may be zero, in which case this is plain mca
// computed through the identical code path.
template <class T>
Tensor<T> mca_with_memory(const Tensor<T>& q_in, const Tensor<T>& kv_in, const Tensor<T>& memory,
                          const AttentionParams<T>& p, std::size_t heads, ScaleMode mode) {
  if (memory.cols() != kv_in.cols())
    throw std::invalid_argument("mca_with_memory: memory width mismatch");
  return mca(q_in, concat<T>({kv_in, memory}, 0), p, heads, mode);
}

template <class T>
struct BlockParams {
  Tensor<T> ln1_g, ln1_b;
  AttentionParams<T> attn;
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> mlp_w1, mlp_b1;  // [d x 4d], [4d]
  Tensor<T> mlp_w2, mlp_b2;  // [4d x d], [d]
};

// Pre-norm residual block: x + attn(ln(x)), then x + mlp(ln(x)).
template <class T>
Tensor<T> transformer_block(const Tensor<T>& x, const BlockParams<T>& p, std::size_t heads,
                            ScaleMode mode, T ln_eps = T(1e-5)) {
  auto n1 = layer_norm(x, p.ln1_g, p.ln1_b, ln_eps);
  auto h = add(x, mca(n1, n1, p.attn, heads, mode));
  auto n2 = layer_norm(h, p.ln2_g, p.ln2_b, ln_eps);
  auto mid = gelu(add_rowvec(matmul(n2, p.mlp_w1), p.mlp_b1));
  return add(h, add_rowvec(matmul(mid, p.mlp_w2), p.mlp_b2));
}

// Classic fixed sinusoidal table: row = position, even columns sin, odd
// columns cos, frequency 10000^{-2i/d}.
template <class T>
Array<T> sinusoidal_positions(std::size_t n, std::size_t d) {
  std::vector<T> out(n * d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t j = 0; j < d; ++j) {
      const double freq = std::pow(10000.0, -2.0 * double(j / 2) / double(d));
      const double angle = double(pos) * freq;
      out[pos * d + j] = T(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return Array<T>({n, d}, std::move(out));
}

}  // namespace mpma
