#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "parscale/common/tensor.hpp"
#include "parscale/model/config.hpp"

namespace parscale {

template <typename T>
using ParameterStore = TensorMap<T>;

// d loss / d tensor, for the trainable subset of a ParameterStore.
template <typename T>
using GradientStore = TensorMap<T>;

// Stable tensor names.
namespace names {
inline const std::string kEmbedding = "embed.weight";
inline const std::string kFinalNorm = "final_norm.weight";
inline const std::string kPrefixBank = "prefix_bank";
inline const std::string kAggFc1Weight = "aggregator.fc1.weight";
inline const std::string kAggFc1Bias = "aggregator.fc1.bias";
inline const std::string kAggFc2Weight = "aggregator.fc2.weight";
inline const std::string kAggFc2Bias = "aggregator.fc2.bias";

std::string layer(std::size_t l, const std::string& leaf);
}  // namespace names

enum class TensorRole {
  kEmbedding,
  kNormScale,
  kProjectionWeight,
  kProjectionBias,
  kPrefixBank,
  kAggregator,
};

struct TensorSpec {
  std::string name;
  Shape shape;
  TensorRole role;
};

// Every tensor implied by the config, in store order. PrefixBank is
// [P, layers, 2, prefix_len, kv_dim]; axis 2 is key (0) / value (1).
std::vector<TensorSpec> parameter_layout(const ModelConfig& config);

// True for tensors that belong to the shared backbone.
bool is_backbone_tensor(const std::string& name);
// Norm scales and biases are exempt from weight decay.
bool is_decay_exempt(const std::string& name);

// Deterministic in (config, seed). Gaussian(0, init_std) weights, unit
// norm scales, zero biases; each prefix stream draws from its own seed.
ParameterStore<float> build_model(const ModelConfig& config,
                                  std::uint64_t seed);

// Adds PrefixBank and AggregationHead (Gaussian, init_std) to a P == 1
// store so that it matches `config` (P > 1). Backbone is left untouched.
void inject_parallel_parameters(ParameterStore<float>& store,
                                const ModelConfig& config,
                                std::uint64_t seed);

// Throws ConfigError when names or shapes differ from the layout.
template <typename T>
void check_store_matches(const ParameterStore<T>& store,
                         const ModelConfig& config);

struct ParameterCounts {
  std::uint64_t total = 0;
  std::uint64_t embedding = 0;
  std::uint64_t non_embedding = 0;
  // (PrefixBank + AggregationHead) / P, or 0 when P == 1.
  double introduced_per_stream = 0.0;
};

// The LM head is tied to the embedding and counted once.
template <typename T>
ParameterCounts count_parameters(const ParameterStore<T>& store,
                                 const ModelConfig& config);
// Same accounting from the layout alone, without allocating tensors.
ParameterCounts count_parameters(const ModelConfig& config);

}  // namespace parscale
