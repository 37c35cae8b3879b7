#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "parscale/model/transformer.hpp"

namespace parscale {

struct GeneratedToken {
  std::size_t position = 0;  // index in prompt + generated sequence
  std::int32_t token = 0;
  std::int32_t stream = 0;   // heaviest aggregation weight, ties to lowest
  std::vector<float> weights;
};

struct Generation {
  std::vector<std::int32_t> tokens;  // generated only, prompt excluded
  std::vector<GeneratedToken> steps;
};

// Greedy argmax over the aggregated distribution (ties to the lowest id).
// Each step re-runs the forward pass over the most recent
// max_seq_len - prefix_len tokens. Throws ContractError for an empty
// prompt, length 0, or a prompt longer than that window.
Generation generate_greedy(const ParameterStore<float>& store, const ModelConfig& config,
                           const std::vector<std::int32_t>& prompt, std::size_t length);

}  // namespace parscale
