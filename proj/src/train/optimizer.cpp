#include "parscale/train/optimizer.hpp"

#include <cmath>

#include "parscale/common/errors.hpp"

namespace parscale {

void adamw_update(ParameterStore<float>& store, const GradientStore<float>& grads,
                  AdamState& state, const TrainConfig& c, double lr) {
  for (const auto& [name, g] : grads) {
    auto& p = store.at(name);
    if (p.size() != g.size()) {
      throw ContractError("gradient for " + name + " does not match its parameter");
    }
    auto& slot = state.slots[name];
    if (slot.m.empty()) {
      slot.m.assign(p.size(), 0.0f);
      slot.v.assign(p.size(), 0.0f);
    }
    slot.steps += 1;
    const double t = static_cast<double>(slot.steps);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    const double decay = is_decay_exempt(name) ? 0.0 : c.weight_decay;
    float* pd = p.data.data();
    const float* gd = g.data.data();
    float* m = slot.m.data();
    float* v = slot.v.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = gd[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = (mi / bc1) / (std::sqrt(vi / bc2) + c.adam_eps);
      pd[i] = static_cast<float>(pd[i] - lr * (step + decay * pd[i]));
    }
  }
}

double global_grad_norm(const GradientStore<float>& grads) {
  double sum = 0.0;
  for (const auto& [name, g] : grads) {
    for (float v : g.data) sum += static_cast<double>(v) * v;
  }
  return std::sqrt(sum);
}

double clip_grad_norm(GradientStore<float>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (!(norm > max_norm)) return norm;
  const double scale = max_norm / norm;
  for (auto& [name, g] : grads) {
    for (float& v : g.data) v = static_cast<float>(v * scale);
  }
  return global_grad_norm(grads);
}

}  // namespace parscale
