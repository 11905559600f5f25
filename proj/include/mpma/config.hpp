#pragma once

// Flat key=value run configuration. Every key has a string getter/setter in
// one registry, so the config file format, CLI flag overrides, and the
// checkpoint manifest all share a single source of truth.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpma/model.hpp"

namespace mpma {

struct RunConfig {
  ModelConfig model;

  double mask_ratio_image = 0.75;
  double mask_ratio_report = 0.5;
  bool cls_maskable = false;

  double lambda_il = 5.0;
  double lambda_gl = 3.0;
  std::size_t warmup_epochs = 5;

  double lr = 2e-4;
  std::string lr_schedule = "constant";  // constant | cosine
  double lr_min = 0.0;                   // cosine floor
  std::size_t lr_warmup_steps = 0;       // linear ramp-in before the schedule
  double grad_clip = 0.0;                // global L2 clip, 0 disables
  double weight_decay = 0.05;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::size_t steps = 0;  // 0: derive from epochs and corpus size
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  bool freeze_text_encoder = false;
  bool log_wall_ms = false;  // real timing breaks byte-identical metrics; opt in

  std::string corpus;
  std::string checkpoint;
  std::string metrics;
  std::string resume;
};

const std::vector<std::string>& config_keys();
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);
std::string config_get(const RunConfig& cfg, const std::string& key);

std::map<std::string, std::string> config_to_map(const RunConfig& cfg);
RunConfig config_from_map(const std::map<std::string, std::string>& kv);

// key=value lines; '#' starts a comment; blank lines ignored.
RunConfig load_config_file(const std::string& path);

void validate_config(const RunConfig& cfg);

}  // namespace mpma
