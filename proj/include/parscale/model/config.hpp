#pragma once

#include <cstddef>
#include <string>

#include "parscale/common/kv_config.hpp"

namespace parscale {

// Architecture plus parallel-scaling hyperparameters of a decoder-only
// transformer. `num_streams` is P; `prefix_len` is ignored when P == 1.
struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t hidden_size = 128;
  std::size_t intermediate_size = 512;
  std::size_t num_heads = 4;
  std::size_t num_kv_groups = 2;
  std::size_t vocab_size = 256;
  std::size_t max_seq_len = 128;
  std::size_t num_streams = 1;
  std::size_t prefix_len = 16;
  double smoothing_epsilon = 0.1;
  double rope_base = 10000.0;
  double init_std = 0.02;
  double norm_eps = 1e-6;

  std::size_t head_dim() const { return hidden_size / num_heads; }
  std::size_t kv_dim() const { return num_kv_groups * head_dim(); }
  // Prefix positions actually present in attention (0 for P == 1).
  std::size_t effective_prefix_len() const {
    return num_streams > 1 ? prefix_len : 0;
  }
  bool has_parallel_streams() const { return num_streams > 1; }

  // Throws ConfigError naming the first violated invariant.
  void validate() const;

  // Same backbone with a different stream count.
  ModelConfig with_streams(std::size_t p) const;

  void write(KeyValueConfig& out, const std::string& prefix = "") const;
  // Missing keys keep the defaults above.
  static ModelConfig read(const KeyValueConfig& in,
                          const std::string& prefix = "");

  bool operator==(const ModelConfig&) const = default;
};

namespace presets {

// Desk-scale default: ~1M-parameter backbone over the byte vocabulary.
ModelConfig desk(std::size_t num_streams = 4);

// Width-scaled family with 36 layers, 16 heads and 2 KV groups over the
// 151,936-token vocabulary; hidden sizes 896, 1024, 1280, 1536, 2048, 2560.
ModelConfig wide(std::size_t hidden_size, std::size_t num_streams = 1);

// Named lookup: "desk" or "wide-<hidden>", e.g. "wide-1536".
ModelConfig by_name(const std::string& name, std::size_t num_streams);

}  // namespace presets
}  // namespace parscale
