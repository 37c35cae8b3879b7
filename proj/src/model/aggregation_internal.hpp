#pragma once

#include "eigen_types.hpp"
#include "parscale/model/aggregation.hpp"

namespace parscale::detail {

// Activations of the aggregation MLP kept for the backward pass.
template <typename T>
struct AggregationActivations {
  Mat<T> concat;   // [rows, P*d]
  Mat<T> hidden;   // [rows, d], tanh output
  Mat<T> weights;  // [rows, P], softmax output before smoothing
};

// stream_hidden is [P, rows, d].
template <typename T>
AggregationActivations<T> aggregation_forward(
    std::span<const T> stream_hidden, std::size_t rows,
    const AggregationHeadView<T>& head);

}  // namespace parscale::detail
