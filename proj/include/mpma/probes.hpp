#pragma once

// Evaluation utilities: frozen-encoder feature extraction, a small linear
// probe trained on those features, and image→report retrieval using the
// alignment-head global embeddings. The probe is deliberately identical for
// trained and untrained encoders (same budget, same seed) so accuracy
// differences are attributable to the features alone.

#include <algorithm>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpma/corpus.hpp"
#include "mpma/masking.hpp"
#include "mpma/model.hpp"
#include "mpma/rng.hpp"
#include "mpma/tensor.hpp"
#include "mpma/vocab.hpp"

namespace mpma {

// Mean-pooled patch encoding of a full (unmasked) image.
template <class T>
std::vector<T> image_features(const ParamMap<T>& params, const ModelConfig& mc,
                              const std::vector<float>& pixels) {
  Tape<T> tape;
  Ctx<T> cx(&tape, params);
  const PatchGrid grid = mc.grid();
  std::vector<T> px(pixels.begin(), pixels.end());
  auto patches = constant<T>({grid.count(), grid.dim()}, patchify(px, grid));
  auto enc = encode_image_full(cx, patches, mc);
  auto pooled = mean_axis(enc, 0);
  return *pooled.values;
}

template <class T>
struct PairGlobals {
  std::vector<T> v_global, t_global;
};

// Global embeddings of an image/report pair through the alignment heads.
template <class T>
PairGlobals<T> pair_globals(const ParamMap<T>& params, const ModelConfig& mc,
                            const std::vector<float>& pixels,
                            const std::vector<std::size_t>& report_ids) {
  Tape<T> tape;
  Ctx<T> cx(&tape, params);
  const PatchGrid grid = mc.grid();
  std::vector<T> px(pixels.begin(), pixels.end());
  auto patches = constant<T>({grid.count(), grid.dim()}, patchify(px, grid));
  auto v = encode_image_full(cx, patches, mc);
  auto t = encode_report(cx, report_ids, mc);
  auto heads = gla_heads(cx, v, t, mc);
  return {*heads.v_global.values, *heads.t_global.values};
}

template <class T>
struct LinearProbe {
  Array<T> w;  // [feature_dim x classes]
  Array<T> b;  // [classes]
};

// Multinomial logistic regression, full-batch adaptive-moment updates.
template <class T>
LinearProbe<T> train_linear_probe(const std::vector<std::vector<T>>& feats,
                                  const std::vector<int>& labels, std::size_t classes,
                                  std::size_t steps = 300, double lr = 0.05,
                                  std::uint64_t seed = 7) {
  if (feats.empty() || feats.size() != labels.size())
    throw std::invalid_argument("probe needs matching non-empty features and labels");
  const std::size_t n = feats.size(), d = feats[0].size();
  std::vector<T> flat;
  flat.reserve(n * d);
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < n; ++i) {
    if (feats[i].size() != d) throw std::invalid_argument("ragged probe features");
    if (labels[i] < 0 || std::size_t(labels[i]) >= classes)
      throw std::invalid_argument("probe label out of range");
    flat.insert(flat.end(), feats[i].begin(), feats[i].end());
    targets.push_back(std::size_t(labels[i]));
  }

  SplitMix64 rng(seed);
  Array<T> w = Array<T>::zeros({d, classes});
  for (auto& x : *w.data) x = T(rng.normal() * 0.02);
  Array<T> b = Array<T>::zeros({classes});
  Array<T> mw = Array<T>::zeros({d, classes}), vw = Array<T>::zeros({d, classes});
  Array<T> mb = Array<T>::zeros({classes}), vb = Array<T>::zeros({classes});

  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  for (std::size_t t = 1; t <= steps; ++t) {
    Tape<T> tape;
    auto x = constant<T>({n, d}, flat);
    auto wt = tape.leaf("w", w);
    auto bt = tape.leaf("b", b);
    auto logits = add_rowvec(matmul(x, wt), bt);
    auto loss = neg(mean_all(take_cols_per_row(log_softmax(logits, 1), targets)));
    tape.backward(loss);
    auto grads = tape.leaf_gradients();
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    auto update = [&](Array<T>& par, Array<T>& m1, Array<T>& m2, const Array<T>& g) {
      auto& p = *par.data;
      auto& m = *m1.data;
      auto& v = *m2.data;
      const auto& gr = *g.data;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = T(beta1 * m[i] + (1.0 - beta1) * gr[i]);
        v[i] = T(beta2 * v[i] + (1.0 - beta2) * gr[i] * gr[i]);
        p[i] = T(p[i] - lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps));
      }
    };
    update(w, mw, vw, grads.at("w"));
    update(b, mb, vb, grads.at("b"));
  }
  return {w, b};
}

template <class T>
int probe_predict(const LinearProbe<T>& probe, const std::vector<T>& feat) {
  const std::size_t d = probe.w.shape[0], k = probe.w.shape[1];
  if (feat.size() != d) throw std::invalid_argument("probe feature dimension mismatch");
  int best = 0;
  double best_score = -1e300;
  for (std::size_t c = 0; c < k; ++c) {
    double s = (*probe.b.data)[c];
    for (std::size_t i = 0; i < d; ++i) s += double(feat[i]) * double((*probe.w.data)[i * k + c]);
    if (s > best_score) {
      best_score = s;
      best = int(c);
    }
  }
  return best;
}

template <class T>
double probe_accuracy(const LinearProbe<T>& probe, const std::vector<std::vector<T>>& feats,
                      const std::vector<int>& labels) {
  if (feats.empty()) throw std::invalid_argument("empty probe evaluation set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < feats.size(); ++i)
    if (probe_predict(probe, feats[i]) == labels[i]) ++hit;
  return double(hit) / double(feats.size());
}

// Recall@1 for image→report retrieval. A query counts as correct when the
// top-scoring candidate report has the same text as the query's own report,
// so duplicate sentences in the candidate pool are not penalized.
template <class T>
double retrieval_recall_at1(const std::vector<std::vector<T>>& v_globals,
                            const std::vector<std::vector<T>>& t_globals,
                            const std::vector<std::string>& texts) {
  const std::size_t n = v_globals.size();
  if (n == 0 || t_globals.size() != n || texts.size() != n)
    throw std::invalid_argument("retrieval inputs must be parallel and non-empty");
  std::size_t hit = 0;
  for (std::size_t q = 0; q < n; ++q) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < v_globals[q].size(); ++i)
        s += double(v_globals[q][i]) * double(t_globals[c][i]);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    if (texts[best] == texts[q]) ++hit;
  }
  return double(hit) / double(n);
}

// Deterministic train/eval split: shuffle then cut at `train_fraction`.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double train_fraction, std::uint64_t seed) {
  auto order = epoch_order(n, seed ^ 0x53504c4954ull, 0);
  const std::size_t cut = std::size_t(double(n) * train_fraction);
  if (cut == 0 || cut >= n) throw std::invalid_argument("degenerate train/eval split");
  return {std::vector<std::size_t>(order.begin(), order.begin() + cut),
          std::vector<std::size_t>(order.begin() + cut, order.end())};
}

}  // namespace mpma
