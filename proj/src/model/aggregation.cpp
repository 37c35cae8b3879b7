#include "parscale/model/aggregation.hpp"

#include <algorithm>
#include <cmath>

#include "aggregation_internal.hpp"
#include "parscale/common/errors.hpp"

namespace parscale {

template <typename T>
AggregationHeadView<T> AggregationHeadView<T>::from_store(
    const ParameterStore<T>& store, const ModelConfig& config) {
  if (!config.has_parallel_streams()) {
    throw ContractError("aggregation head requires num_streams >= 2");
  }
  AggregationHeadView<T> v;
  v.fc1_weight = store.at(names::kAggFc1Weight).span();
  v.fc1_bias = store.at(names::kAggFc1Bias).span();
  v.fc2_weight = store.at(names::kAggFc2Weight).span();
  v.fc2_bias = store.at(names::kAggFc2Bias).span();
  v.num_streams = config.num_streams;
  v.hidden_size = config.hidden_size;
  return v;
}

namespace detail {

template <typename T>
AggregationActivations<T> aggregation_forward(
    std::span<const T> stream_hidden, std::size_t rows,
    const AggregationHeadView<T>& head) {
  const std::size_t p = head.num_streams;
  const std::size_t d = head.hidden_size;
  if (p < 2) {
    throw ContractError(
        "compute_aggregation_weights: P = 1 has no aggregation; bypass it");
  }
  if (stream_hidden.size() != p * rows * d) {
    throw ContractError("compute_aggregation_weights: hidden size mismatch");
  }
  AggregationActivations<T> act;
  act.concat.resize(rows, p * d);
  for (std::size_t s = 0; s < p; ++s) {
    act.concat.middleCols(s * d, d) =
        ConstMatMap<T>(stream_hidden.data() + s * rows * d, rows, d);
  }
  const ConstMatMap<T> w1(head.fc1_weight.data(), p * d, d);
  const ConstRowMap<T> b1(head.fc1_bias.data(), d);
  const ConstMatMap<T> w2(head.fc2_weight.data(), d, p);
  const ConstRowMap<T> b2(head.fc2_bias.data(), p);

  act.hidden.noalias() = act.concat * w1;
  act.hidden.rowwise() += b1;
  act.hidden = act.hidden.array().tanh();
  act.weights.noalias() = act.hidden * w2;
  act.weights.rowwise() += b2;
  for (Eigen::Index r = 0; r < act.weights.rows(); ++r) {
    auto row = act.weights.row(r);
    const T m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
  return act;
}

template struct AggregationActivations<float>;
template struct AggregationActivations<double>;
template AggregationActivations<float> aggregation_forward(
    std::span<const float>, std::size_t, const AggregationHeadView<float>&);
template AggregationActivations<double> aggregation_forward(
    std::span<const double>, std::size_t, const AggregationHeadView<double>&);

}  // namespace detail

template <typename T>
std::vector<T> compute_aggregation_weights(std::span<const T> stream_hidden,
                                           std::size_t rows,
                                           const AggregationHeadView<T>& head) {
  auto act = detail::aggregation_forward(stream_hidden, rows, head);
  return std::vector<T>(act.weights.data(),
                        act.weights.data() + act.weights.size());
}

template <typename T>
void smooth_weights(std::span<T> weights, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw ContractError("smooth_weights: epsilon must lie in [0, 1)");
  }
  const double floor = epsilon / static_cast<double>(weights.size());
  for (auto& w : weights) {
    w = static_cast<T>(static_cast<double>(w) * (1.0 - epsilon) + floor);
  }
}

std::vector<double> cfg_aggregate(std::span<const double> out_cond,
                                  std::span<const double> out_uncond,
                                  double w) {
  if (out_cond.size() != out_uncond.size()) {
    throw ContractError("cfg_aggregate: length mismatch");
  }
  std::vector<double> out(out_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = out_cond[i] + w * (out_cond[i] - out_uncond[i]);
  }
  return out;
}

template <typename T>
LossResult cross_entropy_loss(std::span<const T> probs,
                              std::span<const std::int32_t> targets,
                              std::size_t vocab_size) {
  if (targets.empty() || probs.size() != targets.size() * vocab_size) {
    throw ContractError("cross_entropy_loss: shape mismatch");
  }
  LossResult out;
  double sum = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const auto y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= vocab_size) {
      throw InputError("cross_entropy_loss: target id " + std::to_string(y) +
                       " out of range");
    }
    double p = static_cast<double>(probs[r * vocab_size + y]);
    if (!(p >= kProbabilityFloor)) {
      p = kProbabilityFloor;
      ++out.clamped_count;
    }
    sum -= std::log(p);
  }
  out.value = sum / static_cast<double>(targets.size());
  return out;
}

template <typename T>
std::vector<std::int32_t> attribute_streams(std::span<const T> weights,
                                            std::size_t num_streams) {
  if (num_streams == 0 || weights.size() % num_streams != 0) {
    throw ContractError("attribute_streams: shape mismatch");
  }
  const std::size_t rows = weights.size() / num_streams;
  std::vector<std::int32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = weights.subspan(r * num_streams, num_streams);
    // max_element keeps the first maximum.
    out[r] = static_cast<std::int32_t>(
        std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

template struct AggregationHeadView<float>;
template struct AggregationHeadView<double>;
template std::vector<float> compute_aggregation_weights(
    std::span<const float>, std::size_t, const AggregationHeadView<float>&);
template std::vector<double> compute_aggregation_weights(
    std::span<const double>, std::size_t, const AggregationHeadView<double>&);
template void smooth_weights(std::span<float>, double);
template void smooth_weights(std::span<double>, double);
template LossResult cross_entropy_loss(std::span<const float>,
                                       std::span<const std::int32_t>,
                                       std::size_t);
template LossResult cross_entropy_loss(std::span<const double>,
                                       std::span<const std::int32_t>,
                                       std::size_t);
template std::vector<std::int32_t> attribute_streams(std::span<const float>,
                                                     std::size_t);
template std::vector<std::int32_t> attribute_streams(std::span<const double>,
                                                     std::size_t);

}  // namespace parscale
