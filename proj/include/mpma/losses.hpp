#pragma once

// The four training objectives and their combination:
//  - masked-image reconstruction (MSE over masked patches)
//  - masked-report reconstruction (cross-entropy at masked slots)
//  - global contrastive alignment (symmetric InfoNCE over pooled vectors)
//  - local contrastive alignment (symmetric InfoNCE over aggregation
//    similarities between image regions and report words)
// plus the Gaussian warmup that gates the alignment terms early in training.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mpma/tensor.hpp"

namespace mpma {

// Mean squared error over reconstructed masked patches.
template <class T>
Tensor<T> loss_mim(const Tensor<T>& recon, const Tensor<T>& truth) {
  if (recon.shape != truth.shape)
    throw std::invalid_argument("loss_mim: shape mismatch");
  if (recon.numel() == 0) throw std::invalid_argument("loss_mim: empty input");
  auto d = sub(recon, truth);
  return mean_all(mul(d, d));
}

// Mean negative log-likelihood of the original tokens at masked slots.
template <class T>
Tensor<T> loss_mlm(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
  if (logits.rows() == 0 || targets.empty())
    throw std::invalid_argument("loss_mlm: no masked positions");
  if (targets.size() != logits.rows())
    throw std::invalid_argument("loss_mlm: one target per logit row required");
  auto picked = take_cols_per_row(log_softmax(logits, 1), targets);
  return scale(mean_all(picked), T(-1));
}

// Symmetric contrastive loss over one global vector per sample and modality.
// Row i of each input is sample i; diagonal entries of the similarity matrix
// are the matched pairs.
template <class T>
Tensor<T> loss_global(const Tensor<T>& img_g, const Tensor<T>& txt_g, T tau1) {
  if (tau1 <= T(0)) throw std::invalid_argument("loss_global: temperature must be positive");
  if (img_g.shape != txt_g.shape)
    throw std::invalid_argument("loss_global: batch shapes differ");
  const std::size_t N = img_g.rows();
  auto logits = scale(matmul(img_g, transpose(txt_g)), T(1) / tau1);
  auto over_texts = take_diag(log_softmax(logits, 1));   // image i against all texts
  auto over_images = take_diag(log_softmax(logits, 0));  // text i against all images
  return scale(add(sum_all(over_texts), sum_all(over_images)), T(-1) / T(N));
}

// Local similarity between one image's region features v [N_p x d] and one
// report's projected word features t_m [M x d]: per-word visual aggregates
// g_j = sum_i alpha_ij v_i with alpha a column softmax of v t_m^T / tau2,
// scored as log sum_j exp(g_j . t_j).
template <class T>
Tensor<T> local_similarity_H(const Tensor<T>& v, const Tensor<T>& t_m, T tau2) {
  if (tau2 <= T(0))
    throw std::invalid_argument("local_similarity_H: temperature must be positive");
  if (v.cols() != t_m.cols())
    throw std::invalid_argument("local_similarity_H: feature widths differ");
  auto s = matmul(v, transpose(t_m));            // [N_p x M]
  auto alpha = softmax(scale(s, T(1) / tau2), 0);  // normalize over regions per word
  auto g = matmul(transpose(alpha), v);          // [M x d]
  auto word_scores = sum_axis(mul(g, t_m), 1);   // g_j . t_j for each word
  return logsumexp(word_scores);
}

// Batch-level symmetric contrastive loss over cross-pair local similarities:
// the N x N score matrix pairs sample a's image regions with sample b's
// report words, so off-diagonal entries require full recomputation.
template <class T>
Tensor<T> loss_local(const std::vector<Tensor<T>>& batch_v,
                     const std::vector<Tensor<T>>& batch_t_m, T tau2, T tau3) {
  if (tau3 <= T(0)) throw std::invalid_argument("loss_local: temperature must be positive");
  if (batch_v.empty() || batch_v.size() != batch_t_m.size())
    throw std::invalid_argument("loss_local: batches empty or mismatched");
  const std::size_t N = batch_v.size();
  std::vector<Tensor<T>> cells;
  cells.reserve(N * N);
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t b = 0; b < N; ++b)
      cells.push_back(local_similarity_H(batch_v[a], batch_t_m[b], tau2));
  auto H = scale(stack_scalars(cells, N, N), T(1) / tau3);
  auto over_texts = take_diag(log_softmax(H, 1));
  auto over_images = take_diag(log_softmax(H, 0));
  return scale(add(sum_all(over_texts), sum_all(over_images)), T(-1) / T(N));
}

// Gaussian ramp for the alignment weight: exp(-5 (1 - t/T)^2) for epochs
// t < T, then pinned at 1.
inline double warmup_lambda(std::size_t t, std::size_t T) {
  if (T == 0) throw std::invalid_argument("warmup_lambda: horizon must be >= 1");
  if (t >= T) return 1.0;
  const double r = 1.0 - double(t) / double(T);
  return std::exp(-5.0 * r * r);
}

template <class T>
struct LossBreakdown {
  T l_mim = T(0), l_mlm = T(0), l_g = T(0), l_l = T(0), l_all = T(0);
  bool finite() const {
    return std::isfinite(double(l_mim)) && std::isfinite(double(l_mlm)) &&
           std::isfinite(double(l_g)) && std::isfinite(double(l_l)) &&
           std::isfinite(double(l_all));
  }
};

struct TrainSchedule {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t warmup_epochs = 5;
  double lambda_il = 5.0;
  double lambda_gl = 3.0;
  double lambda_gla() const { return warmup_lambda(epoch, warmup_epochs); }
};

// Weighted combination of the four terms, differentiable end to end.
// Non-finite inputs are rejected here; the trainer is responsible for
// dumping diagnostics before aborting.
template <class T>
Tensor<T> loss_all(const Tensor<T>& l_mim, const Tensor<T>& l_mlm, const Tensor<T>& l_g,
                   const Tensor<T>& l_l, const TrainSchedule& sched) {
  for (const Tensor<T>* p : {&l_mim, &l_mlm, &l_g, &l_l})
    if (!std::isfinite(double(p->scalar())))
      throw std::domain_error("loss_all: non-finite loss component");
  const T gla = T(sched.lambda_gla());
  auto alignment = add(l_g, scale(l_l, T(sched.lambda_gl)));
  return add(add(l_mim, scale(l_mlm, T(sched.lambda_il))), scale(alignment, gla));
}

}  // namespace mpma
