#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "parscale/common/kv_config.hpp"

namespace parscale {

enum class Schedule { cosine, wsd };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& name);

struct TrainConfig {
  double peak_lr = 3e-4;
  double min_lr = 1e-5;
  std::size_t warmup_steps = 2000;
  std::size_t total_steps = 10000;
  Schedule schedule = Schedule::cosine;
  std::size_t wsd_decay_steps = 0;  // length of the final linear anneal
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip_norm = 1.0;
  bool freeze_backbone = false;
  double ema_weight = 0.95;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the violated invariant.
  void validate() const;

  void write(KeyValueConfig& out, const std::string& prefix = "") const;
  static TrainConfig read(const KeyValueConfig& in, const std::string& prefix = "");

  bool operator==(const TrainConfig&) const = default;
};

// Learning rate applied by update number `step` (1-based; step 0 is the
// state before any update). Warmup is linear from 0; cosine then anneals to
// min_lr at total_steps; wsd holds peak until total - decay, then anneals
// linearly to min_lr.
double lr_at(const TrainConfig& config, std::size_t step);

// s_0 = x_0, s_t = w s_{t-1} + (1 - w) x_t.
std::vector<double> ema(std::span<const double> series, double weight);

}  // namespace parscale
