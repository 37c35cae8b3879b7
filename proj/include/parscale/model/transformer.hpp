#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "parscale/model/aggregation.hpp"
#include "parscale/model/parameters.hpp"

namespace parscale {

// Token ids laid out [batch, seq] row-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;

  TokenBatch() = default;
  TokenBatch(std::size_t b, std::size_t t, std::vector<std::int32_t> values);

  std::int32_t at(std::size_t b, std::size_t t) const { return ids[b * seq + t]; }
  std::size_t rows() const { return batch * seq; }
  bool operator==(const TokenBatch&) const = default;
};

template <typename T>
struct StreamBatchOutput {
  std::size_t num_streams = 0;
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t hidden_size = 0;
  std::size_t vocab_size = 0;

  std::vector<T> stream_hidden;  // [P, B, T, d], final-norm output
  std::vector<T> stream_probs;   // [P, B, T, V]
  std::vector<T> weights;        // [B, T, P], after smoothing
  std::vector<T> probs;          // [B, T, V], sum_i w_i p_i

  std::size_t rows() const { return batch * seq; }
  std::span<const T> hidden_of(std::size_t s) const {
    return std::span<const T>(stream_hidden).subspan(s * rows() * hidden_size,
                                                     rows() * hidden_size);
  }
  std::span<const T> probs_of(std::size_t s) const {
    return std::span<const T>(stream_probs).subspan(s * rows() * vocab_size,
                                                    rows() * vocab_size);
  }
};

// Replicates the batch to P streams; stream i attends over its own prefix
// keys/values followed by the causal sequence. Prefix slot k sits at rotary
// position k, sequence token t at prefix_len + t.
template <typename T>
StreamBatchOutput<T> forward_parallel(const ParameterStore<T>& store,
                                      const ModelConfig& config,
                                      const TokenBatch& tokens);

struct BackwardOptions {
  // Only PrefixBank and AggregationHead receive gradients.
  bool freeze_backbone = false;
};

template <typename T>
struct BackwardResult {
  LossResult loss;
  GradientStore<T> grads;
};

// Exact reverse-mode gradients of cross_entropy_loss(forward_parallel(...)).
template <typename T>
BackwardResult<T> backward(const ParameterStore<T>& store,
                           const ModelConfig& config, const TokenBatch& tokens,
                           const TokenBatch& targets,
                           const BackwardOptions& options = {});

// Forward + loss without gradients.
template <typename T>
LossResult evaluate_loss(const ParameterStore<T>& store,
                         const ModelConfig& config, const TokenBatch& tokens,
                         const TokenBatch& targets);

}  // namespace parscale
