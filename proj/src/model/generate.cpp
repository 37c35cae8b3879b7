#include "parscale/model/generate.hpp"

#include <algorithm>
#include <string>

#include "parscale/common/errors.hpp"

namespace parscale {

Generation generate_greedy(const ParameterStore<float>& store, const ModelConfig& config,
                           const std::vector<std::int32_t>& prompt, std::size_t length) {
  const std::size_t window = config.max_seq_len - config.effective_prefix_len();
  if (length == 0) throw ContractError("generation length must be positive");
  if (prompt.empty()) throw ContractError("prompt must not be empty");
  if (prompt.size() > window) {
    throw ContractError("prompt has " + std::to_string(prompt.size()) +
                        " tokens; at most max_seq_len - prefix_len = " +
                        std::to_string(window) + " fit");
  }
  for (std::int32_t id : prompt) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw InputError("prompt token " + std::to_string(id) + " outside the vocabulary");
    }
  }
  const std::size_t P = config.num_streams;
  const std::size_t V = config.vocab_size;
  std::vector<std::int32_t> seq = prompt;
  Generation out;
  for (std::size_t step = 0; step < length; ++step) {
    const std::size_t start = seq.size() > window ? seq.size() - window : 0;
    std::vector<std::int32_t> ctx(seq.begin() + static_cast<std::ptrdiff_t>(start), seq.end());
    const std::size_t T = ctx.size();
    const auto fwd = forward_parallel(store, config, TokenBatch(1, T, std::move(ctx)));
    const float* probs = fwd.probs.data() + (T - 1) * V;
    const auto best = static_cast<std::int32_t>(std::max_element(probs, probs + V) - probs);
    GeneratedToken g;
    g.position = seq.size();
    g.token = best;
    g.weights.assign(fwd.weights.begin() + static_cast<std::ptrdiff_t>((T - 1) * P),
                     fwd.weights.begin() + static_cast<std::ptrdiff_t>(T * P));
    g.stream = attribute_streams<float>(g.weights, P).front();
    seq.push_back(best);
    out.tokens.push_back(best);
    out.steps.push_back(std::move(g));
  }
  return out;
}

}  // namespace parscale
