// Command-line surface: corpus generation, pre-training, finite-difference
// gradient checking, reconstruction dumps, downstream probes (linear-probe
// classification and image->report retrieval), and the fusion ablation
// sweep. Exit codes: 0 success, 1 usage error, 2 numerical failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mpma/config.hpp"
#include "mpma/corpus.hpp"
#include "mpma/probes.hpp"
#include "mpma/trainer.hpp"

namespace {

using namespace mpma;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

// Every config key becomes a long flag; values land in `overrides` only
// when the flag is actually given, so defaults and config files stay
// authoritative for everything else.
void add_config_flags(CLI::App* cmd, std::map<std::string, std::string>& overrides,
                      const std::vector<std::string>& skip = {}) {
  for (const auto& key : config_keys()) {
    if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
    cmd->add_option_function<std::string>(
        "--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; },
        "override config key '" + key + "'");
  }
}

RunConfig resolve_config(const std::string& config_path,
                         const std::map<std::string, std::string>& overrides,
                         RunConfig base = RunConfig{}) {
  RunConfig cfg = config_path.empty() ? base : load_config_file(config_path);
  for (const auto& [k, v] : overrides) config_set(cfg, k, v);
  return cfg;
}

void require_corpus_match(const LoadedCorpus& corpus, const ModelConfig& mc) {
  if (corpus.channels != mc.channels || corpus.height != mc.height || corpus.width != mc.width)
    throw std::invalid_argument("corpus extents do not match the model configuration");
}

// Order- and content-sensitive hash over all parameter bytes; equal
// fingerprints mean bit-identical parameters.
template <class T>
std::string params_fingerprint(const std::map<std::string, Array<T>>& params) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, arr] : params) {
    mix(name.data(), name.size());
    if (!arr.data->empty()) mix(arr.data->data(), arr.data->size() * sizeof(T));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

void write_pgm(const std::string& path, const std::vector<float>& px, std::size_t h,
               std::size_t w) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "P2\n" << w << ' ' << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = std::clamp(double(px[y * w + x]), 0.0, 1.0);
      out << std::lround(v * 255.0) << (x + 1 == w ? "" : " ");
    }
    out << '\n';
  }
}

int cmd_gen_corpus(const std::string& out_dir, std::size_t count, std::uint64_t seed,
                   std::size_t height, std::size_t width, std::size_t channels) {
  SyntheticWorld world;
  world.seed = seed;
  world.channels = channels;
  world.height = height;
  world.width = width;
  generate_corpus(out_dir, count, world);
  nlohmann::ordered_json j;
  j["corpus"] = out_dir;
  j["count"] = count;
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, bool progress) {
  const auto res = train<float>(cfg, !progress);
  nlohmann::ordered_json j;
  j["steps_run"] = res.steps_run;
  j["first_l_all"] = res.first_l_all;
  j["last_l_all"] = res.last_l_all;
  j["last_l_mim"] = res.last_parts.l_mim;
  j["last_l_mlm"] = res.last_parts.l_mlm;
  if (!res.checkpoint_path.empty()) j["checkpoint"] = res.checkpoint_path;
  std::cout << j.dump() << '\n';
  return kExitOk;
}

std::string group_of(const std::string& name) {
  const auto p1 = name.find('.');
  if (p1 == std::string::npos) return name;
  const auto p2 = name.find('.', p1 + 1);
  return p2 == std::string::npos ? name : name.substr(0, p2);
}

// Central finite differences on the combined objective over a 2-item
// in-memory fixture, in 64-bit, against the reverse-mode gradients.
int cmd_gradcheck(RunConfig cfg, bool corrupt) {
  if (cfg.model.d > 16) {
    std::cerr << "gradcheck: model width must be <= 16 for finite differences\n";
    return kExitUsage;
  }
  SyntheticWorld world;
  world.seed = cfg.seed;
  world.channels = cfg.model.channels;
  world.height = cfg.model.height;
  world.width = cfg.model.width;
  LoadedCorpus corpus;
  corpus.channels = world.channels;
  corpus.height = world.height;
  corpus.width = world.width;
  corpus.vocab = corpus_vocabulary();
  for (std::size_t i = 0; i < 2; ++i) {
    const Scene sc = sample_scene(world, i);
    corpus.images.push_back(render_scene(world, sc));
    corpus.reports.push_back(report_for_scene(sc));
  }
  cfg.model.vocab = corpus.vocab.size();
  validate_config(cfg);
  std::vector<std::vector<std::size_t>> toks;
  for (const auto& r : corpus.reports)
    toks.push_back(tokenize(r, corpus.vocab, cfg.model.report_len));

  TrainSchedule sched;
  sched.epoch = cfg.warmup_epochs;  // alignment weight saturated: every branch contributes
  sched.warmup_epochs = cfg.warmup_epochs;
  sched.lambda_il = cfg.lambda_il;
  sched.lambda_gl = cfg.lambda_gl;
  const std::vector<std::size_t> batch = {0, 1};

  auto params = init_params<double>(cfg.model, cfg.seed);
  auto loss_value = [&]() {
    Tape<double> tape;
    Ctx<double> cx(&tape, params);
    return batch_loss(cx, corpus, toks, batch, cfg, sched).total.scalar();
  };

  std::map<std::string, Array<double>> grads;
  {
    Tape<double> tape;
    Ctx<double> cx(&tape, params);
    auto bl = batch_loss(cx, corpus, toks, batch, cfg, sched);
    tape.backward(bl.total);
    grads = tape.leaf_gradients();
  }
  if (corrupt) {
    auto it = grads.find("fus.mem_img");
    if (it == grads.end() || it->second.data->empty()) it = grads.begin();
    (*it->second.data)[0] += 1e-2;
  }

  // Per-coordinate central differences, aggregated per group as the L2
  // relative error ||g_fd - g_an|| / max(||g_fd||, ||g_an||). Individual
  // near-zero coordinates are dominated by truncation noise of the
  // difference quotient; the group norm measures the gradient itself.
  const double h = 1e-5;
  const double tol = 1e-4;
  struct GroupStat {
    double num = 0, fd2 = 0, an2 = 0;
    double worst_abs = 0, worst_an = 0, worst_fd = 0;
    std::string worst_coord;
  };
  std::map<std::string, GroupStat> stats;
  std::size_t n_params = 0;
  for (auto& [name, arr] : params) {
    auto git = grads.find(name);
    auto& data = *arr.data;
    GroupStat& gs = stats[group_of(name)];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double fp = loss_value();
      data[i] = keep - h;
      const double fm = loss_value();
      data[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = git == grads.end() ? 0.0 : (*git->second.data)[i];
      const double diff = std::abs(fd - an);
      gs.num += diff * diff;
      gs.fd2 += fd * fd;
      gs.an2 += an * an;
      if (diff > gs.worst_abs) {
        gs.worst_abs = diff;
        gs.worst_an = an;
        gs.worst_fd = fd;
        gs.worst_coord = name + "[" + std::to_string(i) + "]";
      }
      ++n_params;
    }
  }

  double overall = 0;
  bool ok = true;
  for (const auto& [g, gs] : stats) {
    const double denom = std::max({std::sqrt(gs.fd2), std::sqrt(gs.an2), 1e-12});
    const double rel = std::sqrt(gs.num) / denom;
    const bool pass = rel < tol;
    ok = ok && pass;
    overall = std::max(overall, rel);
    std::cout << "group " << g << " rel_err " << rel << (pass ? " PASS" : " FAIL");
    if (!pass)
      std::cout << "  worst " << gs.worst_coord << " analytic " << gs.worst_an
                << " finite_diff " << gs.worst_fd;
    std::cout << '\n';
  }
  std::cout << "gradcheck " << (ok ? "PASS" : "FAIL") << " max_rel_err " << overall
            << " params " << n_params << " groups " << stats.size() << '\n';
  return ok ? kExitOk : kExitNumerical;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& corpus_dir, std::size_t k,
                    const std::string& out_dir) {
  const auto ck = load_checkpoint<float>(ckpt_path);
  RunConfig cfg = config_from_map(ck.config);
  const LoadedCorpus corpus = load_corpus(corpus_dir);
  cfg.model.vocab = corpus.vocab.size();
  require_corpus_match(corpus, cfg.model);
  if (corpus.channels != 1)
    throw std::invalid_argument("reconstruct writes single-channel pixel files only");
  if (k == 0 || k > corpus.size())
    throw std::invalid_argument("sample count must be in [1, corpus size]");
  std::filesystem::create_directories(out_dir);

  const auto st = state_from_checkpoint(ck, cfg);
  const PatchGrid grid = cfg.model.grid();
  double se = 0;
  std::size_t se_n = 0;
  auto join = [&corpus](const std::vector<std::size_t>& ids) {
    std::string s;
    for (const std::size_t id : ids) {
      if (id == Vocabulary::pad_id) continue;
      if (!s.empty()) s += ' ';
      s += corpus.vocab.tokens[id];
    }
    return s;
  };

  for (std::size_t i = 0; i < k; ++i) {
    Tape<float> tape;
    Ctx<float> cx(&tape, st.params);
    const auto ids = tokenize(corpus.reports[i], corpus.vocab, cfg.model.report_len);
    ItemInputs item;
    item.report_ids = ids;
    item.img_plan = item_image_plan(cfg, i, 0);
    item.rep = item_report_mask(cfg, ids, i, 0);
    const std::vector<float>& px = corpus.images[i];
    const auto patvec = patchify(px, grid);
    auto patches = constant<float>({grid.count(), grid.dim()}, patvec);
    const auto out = forward_item(cx, patches, item, cfg.model);

    const std::string stem = out_dir + "/sample" + std::to_string(i);
    auto masked_px = patvec;
    for (const std::size_t r : item.img_plan.masked)
      std::fill(masked_px.begin() + r * grid.dim(), masked_px.begin() + (r + 1) * grid.dim(),
                0.0f);
    write_pgm(stem + "_masked.pgm", unpatchify(masked_px, grid), corpus.height, corpus.width);

    // Composited output: ground truth at visible slots, model output at
    // masked slots.
    auto comp = patvec;
    const auto& rec = *out.recon.values;
    const auto& truth = *out.truth.values;
    for (std::size_t r = 0; r < item.img_plan.masked.size(); ++r)
      std::copy(rec.begin() + r * grid.dim(), rec.begin() + (r + 1) * grid.dim(),
                comp.begin() + item.img_plan.masked[r] * grid.dim());
    write_pgm(stem + "_recon.pgm", unpatchify(comp, grid), corpus.height, corpus.width);
    write_pgm(stem + "_gt.pgm", px, corpus.height, corpus.width);
    for (std::size_t j = 0; j < rec.size(); ++j) {
      const double d = double(rec[j]) - double(truth[j]);
      se += d * d;
    }
    se_n += rec.size();

    auto filled = item.rep.ids;
    const auto& lg = *out.mlm_logits.values;
    const std::size_t V = cfg.model.vocab;
    for (std::size_t r = 0; r < item.rep.positions.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t v = 1; v < V; ++v)
        if (lg[r * V + v] > lg[r * V + best]) best = v;
      filled[item.rep.positions[r]] = best;
    }
    std::ofstream rep(stem + "_report.txt");
    if (!rep) throw std::runtime_error("cannot open " + stem + "_report.txt");
    rep << "masked: " << join(item.rep.ids) << '\n'
        << "filled: " << join(filled) << '\n'
        << "truth: " << join(item.report_ids) << '\n';
  }

  nlohmann::ordered_json j;
  j["samples"] = k;
  j["out"] = out_dir;
  j["masked_mse"] = se / double(se_n);
  std::cout << j.dump() << '\n';
  return kExitOk;
}

// Frozen-feature linear-probe accuracy on a held-out split; shared by the
// probe subcommand and the ablation sweep.
double classify_accuracy(const ParamMap<float>& params, const RunConfig& cfg,
                         const LoadedCorpus& corpus, double label_fraction,
                         nlohmann::ordered_json* extra = nullptr) {
  const std::size_t classes = shape_names().size();
  std::vector<int> labels(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    labels[i] = glyph_label(corpus.reports[i]);
    if (labels[i] < 0) throw std::invalid_argument("report without a glyph label: " +
                                                   corpus.reports[i]);
  }
  const auto [train_idx, eval_idx] = split_indices(corpus.size(), 0.8, cfg.seed);
  const std::size_t n_sub =
      std::min(train_idx.size(),
               std::max<std::size_t>(1, std::size_t(std::ceil(label_fraction *
                                                              double(train_idx.size())))));
  std::vector<std::vector<float>> train_feats, eval_feats;
  std::vector<int> train_labels, eval_labels;
  for (std::size_t j = 0; j < n_sub; ++j) {
    train_feats.push_back(image_features(params, cfg.model, corpus.images[train_idx[j]]));
    train_labels.push_back(labels[train_idx[j]]);
  }
  for (const std::size_t i : eval_idx) {
    eval_feats.push_back(image_features(params, cfg.model, corpus.images[i]));
    eval_labels.push_back(labels[i]);
  }
  const auto probe = train_linear_probe(train_feats, train_labels, classes, 300, 0.05,
                                        cfg.seed ^ 0x50524f4245ull);
  const double acc = probe_accuracy(probe, eval_feats, eval_labels);
  if (extra) {
    (*extra)["n_probe_train"] = n_sub;
    (*extra)["n_eval"] = eval_idx.size();
  }
  return acc;
}

int cmd_probe(const std::string& ckpt_path, const std::string& task, double label_fraction,
              bool untrained, bool oracle, const std::string& config_path,
              const std::map<std::string, std::string>& overrides) {
  if (label_fraction <= 0.0 || label_fraction > 1.0)
    throw std::invalid_argument("label fraction must be in (0, 1]");
  RunConfig cfg;
  ParamMap<float> params;
  bool from_init = untrained;
  if (!ckpt_path.empty()) {
    const auto ck = load_checkpoint<float>(ckpt_path);
    cfg = config_from_map(ck.config);
    for (const auto& [kk, vv] : overrides) config_set(cfg, kk, vv);
    if (!untrained) params = state_from_checkpoint(ck, cfg).params;
  } else {
    cfg = resolve_config(config_path, overrides);
    from_init = true;
  }
  if (cfg.corpus.empty()) throw std::invalid_argument("probe needs --corpus");
  const LoadedCorpus corpus = load_corpus(cfg.corpus);
  cfg.model.vocab = corpus.vocab.size();
  require_corpus_match(corpus, cfg.model);
  validate_config(cfg);
  if (from_init) params = init_params<float>(cfg.model, cfg.seed);

  nlohmann::ordered_json j;
  j["task"] = task;
  j["untrained"] = from_init;
  if (task == "classify") {
    j["label_fraction"] = label_fraction;
    j["accuracy"] = classify_accuracy(params, cfg, corpus, label_fraction, &j);
  } else {  // retrieve
    const auto [train_idx, eval_idx] = split_indices(corpus.size(), 0.8, cfg.seed);
    std::vector<std::vector<float>> v_globals, t_globals;
    std::vector<std::string> texts;
    for (const std::size_t i : eval_idx) {
      const auto ids = tokenize(corpus.reports[i], corpus.vocab, cfg.model.report_len);
      auto pg = pair_globals(params, cfg.model, corpus.images[i], ids);
      if (oracle) pg.v_global = pg.t_global;  // forced-match harness check
      v_globals.push_back(pg.v_global);
      t_globals.push_back(pg.t_global);
      texts.push_back(corpus.reports[i]);
    }
    j["recall_at_1"] = retrieval_recall_at1(v_globals, t_globals, texts);
    j["chance"] = 1.0 / double(eval_idx.size());
    j["n"] = eval_idx.size();
  }
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_ablate_fusion(const RunConfig& base, const std::string& out_path) {
  if (base.corpus.empty()) throw std::invalid_argument("ablate-fusion needs --corpus");
  const LoadedCorpus corpus = load_corpus(base.corpus);
  std::vector<std::string> lines;
  for (const std::string kind : {"gap", "gmp", "cmf", "ma_cmf"}) {
    RunConfig cfg = base;
    config_set(cfg, "fusion_kind", kind);
    if (!base.checkpoint.empty()) cfg.checkpoint = base.checkpoint + "." + kind;
    if (!base.metrics.empty()) cfg.metrics = base.metrics + "." + kind;
    TrainState<float> st;
    const auto res = train<float>(cfg, true, &st);
    nlohmann::ordered_json row;
    row["fusion_kind"] = kind;
    row["l_mlm"] = res.last_parts.l_mlm;
    row["l_all"] = res.last_l_all;
    row["probe_accuracy"] = classify_accuracy(st.params, cfg, corpus, 1.0);
    row["params_fp"] = params_fingerprint(st.params);
    const std::string line = row.dump();
    std::cout << line << '\n';
    lines.push_back(line);
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open " + out_path);
    for (const auto& line : lines) out << line << '\n';
  }
  return kExitOk;
}

// Gradcheck defaults: a deliberately tiny geometry that still exercises
// every module (masking, fusion memory, alignment heads) in 64-bit.
RunConfig gradcheck_base() {
  RunConfig cfg;
  cfg.model.d = 8;
  cfg.model.heads = 2;
  cfg.model.depth_enc_v = 1;
  cfg.model.depth_dec_v = 1;
  cfg.model.depth_enc_t = 1;
  cfg.model.depth_dec_t = 1;
  cfg.model.patch = 4;
  cfg.model.height = 8;
  cfg.model.width = 8;
  cfg.model.report_len = 6;
  cfg.model.memory_slots = 2;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale multi-task masked vision-language pre-training"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic paired corpus");
  std::string gen_out;
  std::size_t gen_count = 100, gen_h = 32, gen_w = 32, gen_c = 1;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of pairs")->capture_default_str();
  gen->add_option("--seed", gen_seed, "world seed")->capture_default_str();
  gen->add_option("--height", gen_h, "image height")->capture_default_str();
  gen->add_option("--width", gen_w, "image width")->capture_default_str();
  gen->add_option("--channels", gen_c, "image channels")->capture_default_str();

  auto* tr = app.add_subcommand("train", "pre-train on a paired corpus");
  std::string tr_config;
  std::map<std::string, std::string> tr_over;
  bool tr_progress = false;
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_flag("--progress", tr_progress, "print progress lines");
  add_config_flags(tr, tr_over);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_config;
  std::map<std::string, std::string> gc_over;
  bool gc_corrupt = false;
  gc->add_option("--config", gc_config, "key=value config file");
  gc->add_flag("--corrupt-grad", gc_corrupt, "negative-control hook")->group("");
  add_config_flags(gc, gc_over);

  auto* rc = app.add_subcommand("reconstruct", "dump masked/reconstructed/ground-truth samples");
  std::string rc_ckpt, rc_corpus, rc_out;
  std::size_t rc_count = 4;
  rc->add_option("--checkpoint", rc_ckpt, "checkpoint file")->required();
  rc->add_option("--corpus", rc_corpus, "corpus directory")->required();
  rc->add_option("--count", rc_count, "samples to dump")->capture_default_str();
  rc->add_option("--out", rc_out, "output directory")->required();

  auto* pr = app.add_subcommand("probe", "frozen-encoder downstream evaluation");
  std::string pr_ckpt, pr_config, pr_task;
  std::map<std::string, std::string> pr_over;
  double pr_fraction = 1.0;
  bool pr_untrained = false, pr_oracle = false;
  pr->add_option("--checkpoint", pr_ckpt, "checkpoint file (omit for a random encoder)");
  pr->add_option("--task", pr_task, "classify | retrieve")
      ->required()
      ->check(CLI::IsMember({"classify", "retrieve"}));
  pr->add_option("--label-fraction", pr_fraction, "fraction of training labels used")
      ->capture_default_str();
  pr->add_flag("--untrained", pr_untrained, "re-initialize parameters from the config seed");
  pr->add_flag("--oracle-embeddings", pr_oracle, "forced-match harness check")->group("");
  pr->add_option("--config", pr_config, "key=value config file");
  add_config_flags(pr, pr_over, {"checkpoint"});

  auto* ab = app.add_subcommand("ablate-fusion", "train all four fusion variants and compare");
  std::string ab_config, ab_out;
  std::map<std::string, std::string> ab_over;
  ab->add_option("--config", ab_config, "key=value config file");
  ab->add_option("--out", ab_out, "table output path (one JSON row per line)");
  add_config_flags(ab, ab_over);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(gen_out, gen_count, gen_seed, gen_h, gen_w, gen_c);
    if (tr->parsed()) {
      RunConfig cfg = resolve_config(tr_config, tr_over);
      if (cfg.corpus.empty()) throw std::invalid_argument("train needs --corpus");
      return cmd_train(cfg, tr_progress);
    }
    if (gc->parsed()) return cmd_gradcheck(resolve_config(gc_config, gc_over, gradcheck_base()),
                                           gc_corrupt);
    if (rc->parsed()) return cmd_reconstruct(rc_ckpt, rc_corpus, rc_count, rc_out);
    if (pr->parsed())
      return cmd_probe(pr_ckpt, pr_task, pr_fraction, pr_untrained, pr_oracle, pr_config,
                       pr_over);
    if (ab->parsed()) return cmd_ablate_fusion(resolve_config(ab_config, ab_over), ab_out);
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
