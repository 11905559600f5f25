#pragma once

// Training loop: deterministic batch schedule, per-item masking streams,
// the combined objective, a decoupled-weight-decay adaptive-moment
// optimizer implemented from its update equations, JSONL metrics, and
// checkpoint/resume. Everything a step does is a pure function of
// (config, seed, corpus, step index), so runs replay bit-for-bit and a
// resumed run continues the exact trajectory.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpma/checkpoint.hpp"
#include "mpma/config.hpp"
#include "mpma/corpus.hpp"
#include "mpma/losses.hpp"
#include "mpma/model.hpp"

namespace mpma {

// Raised on NaN/Inf losses after the diagnostic snapshot is written; the
// CLI maps it to the numerical-failure exit code.
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Decoupled weight decay, applied only to matrices (decaying gains, biases
// and single vectors hurts more than it regularizes). Moments persist in
// checkpoints under "adam.m/<param>" and "adam.v/<param>".
template <class T>
struct AdamW {
  double lr = 2e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;
  std::map<std::string, Array<T>> m, v;

  void step(ParamMap<T>& params, const std::map<std::string, Array<T>>& grads,
            PosKind pos_kind, bool freeze_text_encoder) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (auto& [name, w] : params) {
      if (param_frozen(name, pos_kind, freeze_text_encoder)) continue;
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const auto& g = *git->second.data;
      auto mit = m.find(name);
      if (mit == m.end()) mit = m.emplace(name, Array<T>::zeros(w.shape)).first;
      auto vit = v.find(name);
      if (vit == v.end()) vit = v.emplace(name, Array<T>::zeros(w.shape)).first;
      auto& mm = *mit->second.data;
      auto& vv = *vit->second.data;
      auto& wd = *w.data;
      const bool decay = w.shape.size() >= 2;
      for (std::size_t i = 0; i < wd.size(); ++i) {
        mm[i] = T(beta1 * mm[i] + (1.0 - beta1) * g[i]);
        vv[i] = T(beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i]);
        const double mhat = mm[i] / bc1;
        const double vhat = vv[i] / bc2;
        double upd = mhat / (std::sqrt(vhat) + eps);
        if (decay) upd += weight_decay * wd[i];
        wd[i] = T(wd[i] - lr * upd);
      }
    }
  }
};

struct MetricsRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double lambda_gla = 0;
  double l_mim = 0, l_mlm = 0, l_g = 0, l_l = 0, l_all = 0;
  double wall_ms = 0;

  std::string to_json_line() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["lambda_gla"] = lambda_gla;
    j["l_mim"] = l_mim;
    j["l_mlm"] = l_mlm;
    j["l_g"] = l_g;
    j["l_l"] = l_l;
    j["l_all"] = l_all;
    j["wall_ms"] = wall_ms;
    return j.dump();
  }
};

namespace detail {
inline constexpr std::uint64_t kImgMaskSalt = 0x494d47u;   // image-mask stream
inline constexpr std::uint64_t kRepMaskSalt = 0x524550u;   // report-mask stream
}  // namespace detail

// Step-indexed learning rate; a pure function so resumed runs continue the
// identical schedule.
inline double scheduled_lr(const RunConfig& cfg, std::uint64_t step, std::uint64_t total) {
  if (step < cfg.lr_warmup_steps)
    return cfg.lr * double(step + 1) / double(cfg.lr_warmup_steps);
  if (cfg.lr_schedule == "cosine") {
    const std::uint64_t s0 = cfg.lr_warmup_steps;
    const std::uint64_t span = total > s0 + 1 ? total - s0 - 1 : 1;
    const double t = double(step - s0) / double(span);
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(t * 3.14159265358979323846));
  }
  return cfg.lr;
}

// Global L2 gradient clipping across all arrays (0 disables).
template <class T>
void clip_gradients(std::map<std::string, Array<T>>& grads, double clip) {
  if (clip <= 0) return;
  double sq = 0;
  for (const auto& [name, g] : grads)
    for (const T v : *g.data) sq += double(v) * double(v);
  const double norm = std::sqrt(sq);
  if (norm <= clip) return;
  const T s = T(clip / norm);
  for (auto& [name, g] : grads)
    for (T& v : *g.data) v *= s;
}

// Masking for corpus item `idx` in epoch `epoch`: stateless, so a resumed
// run regenerates the identical masks without replaying earlier steps.
inline MaskPlan item_image_plan(const RunConfig& cfg, std::size_t idx, std::size_t epoch) {
  SplitMix64 rng(mix_seed(cfg.seed ^ detail::kImgMaskSalt, idx, epoch));
  return make_mask_plan(cfg.model.n_patches(), cfg.mask_ratio_image, rng);
}

inline MaskedReport item_report_mask(const RunConfig& cfg, const std::vector<std::size_t>& ids,
                                     std::size_t idx, std::size_t epoch) {
  SplitMix64 rng(mix_seed(cfg.seed ^ detail::kRepMaskSalt, idx, epoch));
  const auto pool =
      maskable_positions(ids, Vocabulary::pad_id, Vocabulary::cls_id, cfg.cls_maskable);
  return apply_report_mask(ids, pool, cfg.mask_ratio_report, Vocabulary::mask_id, rng);
}

template <class T>
struct BatchLoss {
  Tensor<T> total;
  LossBreakdown<double> parts;
};

// Forward + objective for a list of corpus items on one tape.
template <class T>
BatchLoss<T> batch_loss(Ctx<T>& cx, const LoadedCorpus& corpus,
                        const std::vector<std::vector<std::size_t>>& tokenized,
                        const std::vector<std::size_t>& batch, const RunConfig& cfg,
                        const TrainSchedule& sched) {
  const ModelConfig& mc = cfg.model;
  const PatchGrid grid = mc.grid();
  std::vector<Tensor<T>> recons, truths, logit_blocks, img_globals, txt_globals, vs, tms;
  std::vector<std::size_t> targets;
  for (std::size_t idx : batch) {
    std::vector<T> px(corpus.images[idx].begin(), corpus.images[idx].end());
    auto patches = constant<T>({grid.count(), grid.dim()}, patchify(px, grid));
    ItemInputs item;
    item.report_ids = tokenized[idx];
    item.img_plan = item_image_plan(cfg, idx, sched.epoch);
    item.rep = item_report_mask(cfg, tokenized[idx], idx, sched.epoch);
    auto out = forward_item(cx, patches, item, mc);
    recons.push_back(out.recon);
    truths.push_back(out.truth);
    logit_blocks.push_back(out.mlm_logits);
    targets.insert(targets.end(), item.rep.targets.begin(), item.rep.targets.end());
    img_globals.push_back(out.v_global);
    txt_globals.push_back(out.t_global);
    vs.push_back(out.v_full);
    tms.push_back(out.t_m);
  }
  auto l_mim = loss_mim(concat(recons, 0), concat(truths, 0));
  auto l_mlm = loss_mlm(concat(logit_blocks, 0), targets);
  auto l_g = loss_global(stack_rows(img_globals), stack_rows(txt_globals), T(mc.tau1));
  auto l_l = loss_local(vs, tms, T(mc.tau2), T(mc.tau3));

  BatchLoss<T> out;
  out.parts.l_mim = double(l_mim.scalar());
  out.parts.l_mlm = double(l_mlm.scalar());
  out.parts.l_g = double(l_g.scalar());
  out.parts.l_l = double(l_l.scalar());
  if (!out.parts.finite())
    throw NumericalFailure("non-finite loss component: mim=" + std::to_string(out.parts.l_mim) +
                           " mlm=" + std::to_string(out.parts.l_mlm) +
                           " g=" + std::to_string(out.parts.l_g) +
                           " l=" + std::to_string(out.parts.l_l));
  out.total = loss_all(l_mim, l_mlm, l_g, l_l, sched);
  out.parts.l_all = double(out.total.scalar());
  if (!std::isfinite(out.parts.l_all))
    throw NumericalFailure("non-finite combined loss");
  return out;
}

template <class T>
struct TrainState {
  ParamMap<T> params;
  AdamW<T> opt;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
};

template <class T>
std::map<std::string, Array<T>> state_arrays(const TrainState<T>& st) {
  std::map<std::string, Array<T>> all = st.params;
  for (const auto& [name, arr] : st.opt.m) all.emplace("adam.m/" + name, arr);
  for (const auto& [name, arr] : st.opt.v) all.emplace("adam.v/" + name, arr);
  return all;
}

template <class T>
void save_train_checkpoint(const std::string& path, const RunConfig& cfg,
                           const TrainState<T>& st) {
  save_checkpoint<T>(path, config_to_map(cfg), {st.step, st.epoch}, state_arrays(st));
}

// Splits a loaded array map back into parameters and optimizer moments.
template <class T>
TrainState<T> state_from_checkpoint(const Checkpoint<T>& ck, const RunConfig& cfg) {
  TrainState<T> st;
  st.step = ck.meta.step;
  st.epoch = ck.meta.epoch;
  st.opt.lr = cfg.lr;
  st.opt.weight_decay = cfg.weight_decay;
  st.opt.t = ck.meta.step;
  for (const auto& [name, arr] : ck.arrays) {
    if (name.rfind("adam.m/", 0) == 0)
      st.opt.m.emplace(name.substr(7), arr);
    else if (name.rfind("adam.v/", 0) == 0)
      st.opt.v.emplace(name.substr(7), arr);
    else
      st.params.emplace(name, arr);
  }
  return st;
}

// Resuming with a different model/objective/seed silently diverges, so the
// stored config must agree on everything except paths and step budget.
inline void check_resume_compat(const std::map<std::string, std::string>& stored,
                                const RunConfig& current) {
  static const std::vector<std::string> free_keys = {
      "steps", "epochs", "checkpoint", "metrics", "resume",
      "corpus", "checkpoint_every", "log_wall_ms"};
  for (const auto& key : config_keys()) {
    bool free = false;
    for (const auto& f : free_keys) free = free || f == key;
    if (free) continue;
    auto it = stored.find(key);
    if (it == stored.end()) continue;
    const std::string now = config_get(current, key);
    if (it->second != now)
      throw std::invalid_argument("resume config mismatch on '" + key + "': checkpoint has " +
                                  it->second + ", run has " + now);
  }
}

struct TrainResult {
  double first_l_all = 0;
  double last_l_all = 0;
  LossBreakdown<double> last_parts;
  std::uint64_t steps_run = 0;
  std::string checkpoint_path;
};

// The entry point behind the train subcommand. `quiet` suppresses progress
// lines (metrics still go to the metrics file). `out_state` receives the
// final parameters when the caller wants them without a checkpoint file.
template <class T>
TrainResult train(RunConfig cfg, bool quiet = true, TrainState<T>* out_state = nullptr) {
  const LoadedCorpus corpus = load_corpus(cfg.corpus);
  cfg.model.vocab = corpus.vocab.size();
  if (corpus.channels != cfg.model.channels || corpus.height != cfg.model.height ||
      corpus.width != cfg.model.width)
    throw std::invalid_argument("corpus extents do not match the model configuration");
  validate_config(cfg);
  if (corpus.size() == 0) throw std::invalid_argument("empty corpus");

  std::vector<std::vector<std::size_t>> tokenized;
  tokenized.reserve(corpus.size());
  for (const auto& r : corpus.reports)
    tokenized.push_back(tokenize(r, corpus.vocab, cfg.model.report_len));

  TrainState<T> st;
  if (!cfg.resume.empty()) {
    auto ck = load_checkpoint<T>(cfg.resume);
    check_resume_compat(ck.config, cfg);
    st = state_from_checkpoint(ck, cfg);
  } else {
    st.params = init_params<T>(cfg.model, cfg.seed);
    st.opt.lr = cfg.lr;
    st.opt.weight_decay = cfg.weight_decay;
  }

  const std::size_t n = corpus.size();
  const std::size_t bpe = (n + cfg.batch_size - 1) / cfg.batch_size;  // batches per epoch
  const std::uint64_t total_steps =
      cfg.steps > 0 ? cfg.steps : std::uint64_t(cfg.epochs) * bpe;
  if (st.step >= total_steps)
    throw std::invalid_argument("checkpoint is already at or past the requested step budget");

  std::ofstream metrics;
  if (!cfg.metrics.empty()) {
    metrics.open(cfg.metrics, std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open metrics file: " + cfg.metrics);
  }

  TrainResult result;
  for (std::uint64_t s = st.step; s < total_steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t epoch = std::size_t(s / bpe);
    const std::size_t pos = std::size_t(s % bpe);
    const auto order = epoch_order(n, cfg.seed, epoch);
    const std::size_t lo = pos * cfg.batch_size;
    const std::size_t hi = std::min(n, lo + cfg.batch_size);
    std::vector<std::size_t> batch(order.begin() + lo, order.begin() + hi);

    TrainSchedule sched;
    sched.step = s;
    sched.epoch = epoch;
    sched.warmup_epochs = cfg.warmup_epochs;
    sched.lambda_il = cfg.lambda_il;
    sched.lambda_gl = cfg.lambda_gl;

    Tape<T> tape;
    Ctx<T> cx(&tape, st.params);
    BatchLoss<T> loss;
    try {
      loss = batch_loss(cx, corpus, tokenized, batch, cfg, sched);
    } catch (const NumericalFailure&) {
      if (!cfg.checkpoint.empty()) {
        st.step = s;
        st.epoch = epoch;
        save_train_checkpoint(cfg.checkpoint + ".diverged", cfg, st);
        std::cerr << "diagnostic snapshot written to " << cfg.checkpoint << ".diverged\n";
      }
      throw;
    }
    tape.backward(loss.total);
    auto grads = tape.leaf_gradients();
    clip_gradients(grads, cfg.grad_clip);
    st.opt.lr = scheduled_lr(cfg, s, total_steps);
    st.opt.step(st.params, grads, cfg.model.pos_kind, cfg.freeze_text_encoder);
    st.step = s + 1;
    st.epoch = epoch;

    if (s == 0 || result.steps_run == 0) result.first_l_all = loss.parts.l_all;
    result.last_l_all = loss.parts.l_all;
    result.last_parts = loss.parts;
    ++result.steps_run;

    MetricsRecord rec;
    rec.step = s;
    rec.epoch = epoch;
    rec.lambda_gla = sched.lambda_gla();
    rec.l_mim = loss.parts.l_mim;
    rec.l_mlm = loss.parts.l_mlm;
    rec.l_g = loss.parts.l_g;
    rec.l_l = loss.parts.l_l;
    rec.l_all = loss.parts.l_all;
    if (cfg.log_wall_ms) {
      const auto t1 = std::chrono::steady_clock::now();
      rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    if (metrics.is_open()) metrics << rec.to_json_line() << '\n';
    if (!quiet && (s % 25 == 0 || s + 1 == total_steps))
      std::cout << "step " << s << " l_all " << loss.parts.l_all << '\n';

    if (!cfg.checkpoint.empty() && cfg.checkpoint_every > 0 &&
        st.step % cfg.checkpoint_every == 0 && st.step < total_steps)
      save_train_checkpoint(cfg.checkpoint, cfg, st);
  }

  if (!cfg.checkpoint.empty()) {
    save_train_checkpoint(cfg.checkpoint, cfg, st);
    result.checkpoint_path = cfg.checkpoint;
  }
  if (out_state) *out_state = st;
  return result;
}

}  // namespace mpma
