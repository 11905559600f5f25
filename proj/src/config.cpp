#include "mpma/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace mpma {

namespace {

struct KeyEntry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return std::size_t(x);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": expected a non-negative integer, got '" +
                                v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key " + key + ": expected true/false, got '" + v + "'");
}

std::string real_str(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

const std::vector<KeyEntry>& registry() {
  static const std::vector<KeyEntry> entries = [] {
    std::vector<KeyEntry> r;
    auto size_key = [&r](const std::string& key, std::size_t RunConfig::* field) {
      r.push_back({key, [field](const RunConfig& c) { return std::to_string(c.*field); },
                   [key, field](RunConfig& c, const std::string& v) {
                     c.*field = parse_size(key, v);
                   }});
    };
    auto msize_key = [&r](const std::string& key, std::size_t ModelConfig::* field) {
      r.push_back({key,
                   [field](const RunConfig& c) { return std::to_string(c.model.*field); },
                   [key, field](RunConfig& c, const std::string& v) {
                     c.model.*field = parse_size(key, v);
                   }});
    };
    auto real_key = [&r](const std::string& key, double RunConfig::* field) {
      r.push_back({key, [field](const RunConfig& c) { return real_str(c.*field); },
                   [key, field](RunConfig& c, const std::string& v) {
                     c.*field = parse_real(key, v);
                   }});
    };
    auto mreal_key = [&r](const std::string& key, double ModelConfig::* field) {
      r.push_back({key, [field](const RunConfig& c) { return real_str(c.model.*field); },
                   [key, field](RunConfig& c, const std::string& v) {
                     c.model.*field = parse_real(key, v);
                   }});
    };
    auto bool_key = [&r](const std::string& key, bool RunConfig::* field) {
      r.push_back({key,
                   [field](const RunConfig& c) { return (c.*field) ? "true" : "false"; },
                   [key, field](RunConfig& c, const std::string& v) {
                     c.*field = parse_bool(key, v);
                   }});
    };
    auto string_key = [&r](const std::string& key, std::string RunConfig::* field) {
      r.push_back({key, [field](const RunConfig& c) { return c.*field; },
                   [field](RunConfig& c, const std::string& v) { c.*field = v; }});
    };

    msize_key("d", &ModelConfig::d);
    msize_key("heads", &ModelConfig::heads);
    msize_key("depth_enc_v", &ModelConfig::depth_enc_v);
    msize_key("depth_dec_v", &ModelConfig::depth_dec_v);
    msize_key("depth_enc_t", &ModelConfig::depth_enc_t);
    msize_key("depth_dec_t", &ModelConfig::depth_dec_t);
    msize_key("patch", &ModelConfig::patch);
    msize_key("channels", &ModelConfig::channels);
    msize_key("height", &ModelConfig::height);
    msize_key("width", &ModelConfig::width);
    msize_key("report_len", &ModelConfig::report_len);
    msize_key("vocab", &ModelConfig::vocab);
    msize_key("memory_slots", &ModelConfig::memory_slots);
    r.push_back({"fusion_kind",
                 [](const RunConfig& c) { return to_string(c.model.fusion_kind); },
                 [](RunConfig& c, const std::string& v) {
                   c.model.fusion_kind = fusion_kind_from_string(v);
                 }});
    r.push_back({"scale_mode",
                 [](const RunConfig& c) {
                   return c.model.scale_mode == ScaleMode::per_head ? "per_head" : "literal_d";
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.model.scale_mode = scale_mode_from_string(v);
                 }});
    r.push_back({"pos_kind",
                 [](const RunConfig& c) {
                   return c.model.pos_kind == PosKind::learned ? "learned" : "sinusoidal";
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.model.pos_kind = pos_kind_from_string(v);
                 }});
    r.push_back({"gla_global_norm",
                 [](const RunConfig& c) { return c.model.gla_l2_norm ? "l2" : "raw"; },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "l2") c.model.gla_l2_norm = true;
                   else if (v == "raw") c.model.gla_l2_norm = false;
                   else throw std::invalid_argument("gla_global_norm must be l2 or raw");
                 }});
    r.push_back({"fusion_image_source",
                 [](const RunConfig& c) {
                   return c.model.fusion_uses_full_image ? "full" : "masked";
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "full") c.model.fusion_uses_full_image = true;
                   else if (v == "masked") c.model.fusion_uses_full_image = false;
                   else throw std::invalid_argument("fusion_image_source must be full or masked");
                 }});
    mreal_key("tau1", &ModelConfig::tau1);
    mreal_key("tau2", &ModelConfig::tau2);
    mreal_key("tau3", &ModelConfig::tau3);

    real_key("mask_ratio_image", &RunConfig::mask_ratio_image);
    real_key("mask_ratio_report", &RunConfig::mask_ratio_report);
    bool_key("cls_maskable", &RunConfig::cls_maskable);
    real_key("lambda_il", &RunConfig::lambda_il);
    real_key("lambda_gl", &RunConfig::lambda_gl);
    size_key("warmup_epochs", &RunConfig::warmup_epochs);
    real_key("lr", &RunConfig::lr);
    r.push_back({"lr_schedule", [](const RunConfig& c) { return c.lr_schedule; },
                 [](RunConfig& c, const std::string& v) {
                   if (v != "constant" && v != "cosine")
                     throw std::invalid_argument("lr_schedule must be constant or cosine");
                   c.lr_schedule = v;
                 }});
    real_key("lr_min", &RunConfig::lr_min);
    size_key("lr_warmup_steps", &RunConfig::lr_warmup_steps);
    real_key("grad_clip", &RunConfig::grad_clip);
    real_key("weight_decay", &RunConfig::weight_decay);
    size_key("batch_size", &RunConfig::batch_size);
    size_key("epochs", &RunConfig::epochs);
    size_key("steps", &RunConfig::steps);
    r.push_back({"seed",
                 [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) {
                   c.seed = std::uint64_t(parse_size("seed", v));
                 }});
    size_key("checkpoint_every", &RunConfig::checkpoint_every);
    bool_key("freeze_text_encoder", &RunConfig::freeze_text_encoder);
    bool_key("log_wall_ms", &RunConfig::log_wall_ms);
    string_key("corpus", &RunConfig::corpus);
    string_key("checkpoint", &RunConfig::checkpoint);
    string_key("metrics", &RunConfig::metrics);
    string_key("resume", &RunConfig::resume);
    return r;
  }();
  return entries;
}

const KeyEntry& entry_for(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return e;
  throw std::invalid_argument("unknown config key: " + key);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : registry()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
  entry_for(key).set(cfg, value);
}

std::string config_get(const RunConfig& cfg, const std::string& key) {
  return entry_for(key).get(cfg);
}

std::map<std::string, std::string> config_to_map(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& e : registry()) out[e.key] = e.get(cfg);
  return out;
}

RunConfig config_from_map(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  for (const auto& [k, v] : kv) config_set(cfg, k, v);
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    auto strip = [](std::string s) {
      const auto sb = s.find_first_not_of(" \t");
      if (sb == std::string::npos) return std::string();
      const auto se = s.find_last_not_of(" \t");
      return s.substr(sb, se - sb + 1);
    };
    config_set(cfg, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  return cfg;
}

void validate_config(const RunConfig& cfg) {
  cfg.model.validate();
  if (cfg.mask_ratio_image <= 0 || cfg.mask_ratio_image >= 1)
    throw std::invalid_argument("mask_ratio_image must lie in (0,1)");
  if (cfg.mask_ratio_report <= 0 || cfg.mask_ratio_report >= 1)
    throw std::invalid_argument("mask_ratio_report must lie in (0,1)");
  if (cfg.warmup_epochs == 0) throw std::invalid_argument("warmup_epochs must be >= 1");
  if (cfg.lr <= 0) throw std::invalid_argument("lr must be positive");
  if (cfg.lr_min < 0 || cfg.lr_min > cfg.lr)
    throw std::invalid_argument("lr_min must be in [0, lr]");
  if (cfg.grad_clip < 0) throw std::invalid_argument("grad_clip must be >= 0");
  if (cfg.weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
}

}  // namespace mpma
