#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "parscale/model/parameters.hpp"
#include "parscale/train/schedule.hpp"

namespace parscale {

// Per-tensor first/second moments and update counts. Tensors added later
// (stage-2 prefixes, aggregation head) start from zero state while existing
// tensors keep theirs.
struct AdamState {
  struct Slot {
    std::vector<float> m;
    std::vector<float> v;
    std::size_t steps = 0;
  };
  std::map<std::string, Slot> slots;
};

// Decoupled weight decay (p -= lr * wd * p), skipped for norm scales and
// biases. Only tensors present in `grads` are touched.
void adamw_update(ParameterStore<float>& store, const GradientStore<float>& grads,
                  AdamState& state, const TrainConfig& config, double lr);

// Global L2 norm over all gradient tensors, accumulated in double.
double global_grad_norm(const GradientStore<float>& grads);

// Scales every gradient by max_norm / norm when norm > max_norm. Returns the
// norm after clipping.
double clip_grad_norm(GradientStore<float>& grads, double max_norm);

}  // namespace parscale
