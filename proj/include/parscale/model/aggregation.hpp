#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "parscale/model/parameters.hpp"

namespace parscale {

// Read-only view of the aggregation MLP: Linear(P*d -> d), tanh,
// Linear(d -> P). Weights are [in, out] row-major.
template <typename T>
struct AggregationHeadView {
  std::span<const T> fc1_weight;  // [P*d, d]
  std::span<const T> fc1_bias;    // [d]
  std::span<const T> fc2_weight;  // [d, P]
  std::span<const T> fc2_bias;    // [P]
  std::size_t num_streams = 0;
  std::size_t hidden_size = 0;

  static AggregationHeadView from_store(const ParameterStore<T>& store,
                                        const ModelConfig& config);
};

// Softmax(head(concat of the P stream hiddens)) per position.
// stream_hidden is [P, rows, d]; returns [rows, P]. Requires P >= 2.
template <typename T>
std::vector<T> compute_aggregation_weights(std::span<const T> stream_hidden,
                                           std::size_t rows,
                                           const AggregationHeadView<T>& head);

// In place: w_i <- w_i (1 - eps) + eps / P, for one simplex vector.
template <typename T>
void smooth_weights(std::span<T> weights, double epsilon);

// Static two-stream guidance: cond + w (cond - uncond).
std::vector<double> cfg_aggregate(std::span<const double> out_cond,
                                  std::span<const double> out_uncond,
                                  double w);

// Probability floor applied before the log in the loss.
inline constexpr double kProbabilityFloor = 1e-30;

struct LossResult {
  double value = 0.0;            // mean nats
  std::size_t clamped_count = 0; // targets whose probability hit the floor
};

// Mean of -log p(target) over rows. probs is [rows, vocab].
template <typename T>
LossResult cross_entropy_loss(std::span<const T> probs,
                              std::span<const std::int32_t> targets,
                              std::size_t vocab_size);

// Index of the heaviest stream per row, ties to the lowest index.
// weights is [rows, P].
template <typename T>
std::vector<std::int32_t> attribute_streams(std::span<const T> weights,
                                            std::size_t num_streams);

}  // namespace parscale
