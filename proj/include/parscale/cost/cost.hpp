#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "parscale/common/kv_config.hpp"
#include "parscale/model/config.hpp"

namespace parscale {

struct HardwareSpec {
  std::string name = "custom";
  double memory_bandwidth = 0.0;  // bytes / s
  double peak_compute = 0.0;      // FLOP / s
  double bandwidth_efficiency = 1.0;
  double compute_efficiency = 1.0;
  double bytes_per_weight = 2.0;
  double bytes_per_kv_element = 2.0;

  void validate() const;
  void write(KeyValueConfig& out, const std::string& prefix = "") const;
  // Starts from the preset named by `<prefix>preset` (default "accelerator")
  // and applies any individual field overrides.
  static HardwareSpec read(const KeyValueConfig& in, const std::string& prefix = "");
};

// Illustrative accelerator numbers (2 TB/s, 312 TFLOP/s, 16-bit weights and
// cache); chosen for this tool, not measurements of any particular device.
// Names: "accelerator", "laptop-cpu". Unknown names throw ConfigError.
HardwareSpec hardware_preset(const std::string& name);
std::vector<std::string> hardware_preset_names();

enum class Regime { memory_bound, compute_bound };
std::string to_string(Regime r);

struct CostReport {
  double weight_bytes = 0.0;
  double kv_bytes = 0.0;
  double total_bytes = 0.0;
  double decode_flops_per_token = 0.0;
  double prefill_flops = 0.0;
  double memory_time = 0.0;
  double compute_time = 0.0;
  double decode_latency_per_token = 0.0;
  double prefill_latency = 0.0;
  Regime regime = Regime::memory_bound;
};

// Total parameters (embedding once, tied head) times bytes_per_weight,
// including prefixes and the aggregation head when P > 1.
double weight_memory(const ModelConfig& config, const HardwareSpec& hw);

// B * P * (T + prefix_len) * layers * 2 * kv_dim * bytes_per_kv_element.
// Throws ContractError when T + prefix_len exceeds max_seq_len.
double kv_memory(const ModelConfig& config, std::size_t batch, std::size_t context,
                 const HardwareSpec& hw);

// FLOPs to produce one token per sequence, with `context` tokens already
// cached. A multiply-accumulate counts 2. Per stream: every linear layer and
// the tied LM head (embedding lookup excluded), plus QK^T and AV over
// context + prefix + 1 positions. Once per token: the aggregation head and
// the P-way mixture of distributions. Norms, activations and softmax are not
// counted.
double decode_flops(const ModelConfig& config, std::size_t batch, std::size_t context = 0);

// FLOPs to encode a `context`-token prompt per sequence, causal attention.
double prefill_flops(const ModelConfig& config, std::size_t batch, std::size_t context);

// Roofline: each latency is the larger of bytes moved over effective
// bandwidth and FLOPs over effective compute; regime names the larger term
// of the decode step.
CostReport decode_latency(const ModelConfig& config, std::size_t batch,
                          std::size_t context, const HardwareSpec& hw);

struct ScalingPair {
  std::string name;
  ModelConfig param_scaled;  // more parameters, usually P = 1
  ModelConfig parscale;      // fewer parameters, P streams
};

struct ComparisonRow {
  std::string pair;
  std::size_t batch = 0;
  std::size_t context = 0;
  CostReport base;  // the parscale config at P = 1
  CostReport param_scaled;
  CostReport parscale;
  // Increase over base for each strategy, parscale / param_scaled; 1 when
  // both increases are zero.
  double memory_increase_ratio = 1.0;
  double latency_increase_ratio = 1.0;
  // Absolute parscale / param_scaled.
  double memory_ratio = 1.0;
  double latency_ratio = 1.0;
};

std::vector<ComparisonRow> compare_scaling(const std::vector<ScalingPair>& pairs,
                                           const std::vector<std::size_t>& batches,
                                           const std::vector<std::size_t>& contexts,
                                           const HardwareSpec& hw);

// Sweep file layout:
//   hardware.preset = accelerator        (plus optional hardware.<field> overrides)
//   batches = 1,2,4,8
//   contexts = 64,128,256,512
//   pairs = small-vs-large               (comma-separated; empty for none)
//   pair.small-vs-large.parscale = wide-1536
//   pair.small-vs-large.parscale_streams = 8
//   pair.small-vs-large.param_scaled = wide-2560
//   pair.small-vs-large.param_scaled_streams = 1
// Unknown keys throw ConfigError.
struct CostSweep {
  HardwareSpec hardware;
  std::vector<ScalingPair> pairs;
  std::vector<std::size_t> batches;
  std::vector<std::size_t> contexts;

  static CostSweep read(const KeyValueConfig& in);
  std::vector<ComparisonRow> run() const;
};

// One row per (pair, B, T), header always present.
std::string comparison_to_csv(const std::vector<ComparisonRow>& rows);
std::string comparison_to_json(const std::vector<ComparisonRow>& rows, const HardwareSpec& hw);

}  // namespace parscale
