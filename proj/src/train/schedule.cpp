#include "parscale/train/schedule.hpp"

#include <cmath>
#include <numbers>

#include "parscale/common/errors.hpp"

namespace parscale {

std::string to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "wsd"; }

Schedule parse_schedule(const std::string& name) {
  if (name == "cosine") return Schedule::cosine;
  if (name == "wsd") return Schedule::wsd;
  throw ConfigError("unknown schedule '" + name + "' (expected cosine or wsd)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (total_steps == 0) fail("total_steps must be positive");
  if (!(warmup_steps < total_steps)) fail("warmup_steps < total_steps violated");
  if (!(min_lr > 0.0 && min_lr <= peak_lr)) fail("0 < min_lr <= peak_lr violated");
  if (!(ema_weight > 0.0 && ema_weight < 1.0)) fail("ema_weight must lie in (0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(grad_clip_norm > 0.0)) fail("grad_clip_norm must be positive");
  if (schedule == Schedule::wsd && wsd_decay_steps > total_steps - warmup_steps) {
    fail("wsd_decay_steps must not exceed total_steps - warmup_steps");
  }
}

void TrainConfig::write(KeyValueConfig& out, const std::string& prefix) const {
  auto put = [&](const char* k, const std::string& v) { out.set(prefix + k, v); };
  put("peak_lr", format_real(peak_lr));
  put("min_lr", format_real(min_lr));
  put("warmup_steps", std::to_string(warmup_steps));
  put("total_steps", std::to_string(total_steps));
  put("schedule", to_string(schedule));
  put("wsd_decay_steps", std::to_string(wsd_decay_steps));
  put("beta1", format_real(beta1));
  put("beta2", format_real(beta2));
  put("adam_eps", format_real(adam_eps));
  put("weight_decay", format_real(weight_decay));
  put("grad_clip_norm", format_real(grad_clip_norm));
  put("freeze_backbone", freeze_backbone ? "true" : "false");
  put("ema_weight", format_real(ema_weight));
  put("seed", std::to_string(seed));
}

TrainConfig TrainConfig::read(const KeyValueConfig& in, const std::string& prefix) {
  TrainConfig c;
  auto count = [&](const char* k, std::size_t fallback) {
    const auto v = in.get_int(prefix + k, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(prefix + k + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.peak_lr = in.get_double(prefix + "peak_lr", c.peak_lr);
  c.min_lr = in.get_double(prefix + "min_lr", c.min_lr);
  c.warmup_steps = count("warmup_steps", c.warmup_steps);
  c.total_steps = count("total_steps", c.total_steps);
  c.schedule = parse_schedule(in.get_string(prefix + "schedule", to_string(c.schedule)));
  c.wsd_decay_steps = count("wsd_decay_steps", c.wsd_decay_steps);
  c.beta1 = in.get_double(prefix + "beta1", c.beta1);
  c.beta2 = in.get_double(prefix + "beta2", c.beta2);
  c.adam_eps = in.get_double(prefix + "adam_eps", c.adam_eps);
  c.weight_decay = in.get_double(prefix + "weight_decay", c.weight_decay);
  c.grad_clip_norm = in.get_double(prefix + "grad_clip_norm", c.grad_clip_norm);
  c.freeze_backbone = in.get_bool(prefix + "freeze_backbone", c.freeze_backbone);
  c.ema_weight = in.get_double(prefix + "ema_weight", c.ema_weight);
  c.seed = count("seed", c.seed);
  return c;
}

double lr_at(const TrainConfig& c, std::size_t step) {
  if (step > c.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                        std::to_string(c.total_steps));
  }
  if (step < c.warmup_steps) {
    return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  if (c.schedule == Schedule::cosine) {
    const double span = static_cast<double>(c.total_steps - c.warmup_steps);
    const double progress = static_cast<double>(step - c.warmup_steps) / span;
    return c.min_lr +
           0.5 * (c.peak_lr - c.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
  }
  const std::size_t decay_start = c.total_steps - c.wsd_decay_steps;
  if (step <= decay_start) return c.peak_lr;
  const double frac = static_cast<double>(step - decay_start) /
                      static_cast<double>(c.wsd_decay_steps);
  return c.peak_lr - (c.peak_lr - c.min_lr) * frac;
}

std::vector<double> ema(std::span<const double> series, double weight) {
  if (series.empty()) throw InputError("ema of an empty series");
  if (!(weight > 0.0 && weight < 1.0)) throw ContractError("ema weight must lie in (0, 1)");
  std::vector<double> out(series.size());
  out[0] = series[0];
  for (std::size_t t = 1; t < series.size(); ++t) {
    out[t] = weight * out[t - 1] + (1.0 - weight) * series[t];
  }
  return out;
}

}  // namespace parscale
