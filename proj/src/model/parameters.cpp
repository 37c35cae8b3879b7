#include "parscale/model/parameters.hpp"

#include <random>

#include "parscale/common/errors.hpp"

namespace parscale {

std::string names::layer(std::size_t l, const std::string& leaf) {
  return "layers." + std::to_string(l) + "." + leaf;
}

std::vector<TensorSpec> parameter_layout(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.hidden_size;
  const std::size_t kv = config.kv_dim();
  const std::size_t inter = config.intermediate_size;
  using R = TensorRole;

  std::vector<TensorSpec> out;
  out.push_back({names::kEmbedding, {config.vocab_size, d}, R::kEmbedding});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    auto L = [l](const char* leaf) { return names::layer(l, leaf); };
    out.push_back({L("attn_norm.weight"), {d}, R::kNormScale});
    out.push_back({L("attn.q_proj.weight"), {d, d}, R::kProjectionWeight});
    out.push_back({L("attn.q_proj.bias"), {d}, R::kProjectionBias});
    out.push_back({L("attn.k_proj.weight"), {d, kv}, R::kProjectionWeight});
    out.push_back({L("attn.k_proj.bias"), {kv}, R::kProjectionBias});
    out.push_back({L("attn.v_proj.weight"), {d, kv}, R::kProjectionWeight});
    out.push_back({L("attn.v_proj.bias"), {kv}, R::kProjectionBias});
    out.push_back({L("attn.o_proj.weight"), {d, d}, R::kProjectionWeight});
    out.push_back({L("mlp_norm.weight"), {d}, R::kNormScale});
    out.push_back({L("mlp.gate_proj.weight"), {d, inter}, R::kProjectionWeight});
    out.push_back({L("mlp.up_proj.weight"), {d, inter}, R::kProjectionWeight});
    out.push_back({L("mlp.down_proj.weight"), {inter, d}, R::kProjectionWeight});
  }
  out.push_back({names::kFinalNorm, {d}, R::kNormScale});
  if (config.has_parallel_streams()) {
    const std::size_t p = config.num_streams;
    out.push_back({names::kPrefixBank,
                   {p, config.num_layers, 2, config.prefix_len, kv},
                   R::kPrefixBank});
    out.push_back({names::kAggFc1Weight, {p * d, d}, R::kAggregator});
    out.push_back({names::kAggFc1Bias, {d}, R::kAggregator});
    out.push_back({names::kAggFc2Weight, {d, p}, R::kAggregator});
    out.push_back({names::kAggFc2Bias, {p}, R::kAggregator});
  }
  return out;
}

bool is_backbone_tensor(const std::string& name) {
  return name != names::kPrefixBank && name.rfind("aggregator.", 0) != 0;
}

bool is_decay_exempt(const std::string& name) {
  auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".bias") || ends_with("norm.weight");
}

namespace {

std::mt19937_64 tensor_rng(std::uint64_t seed, const std::string& name,
                           std::uint64_t salt) {
  // FNV-1a keeps the per-tensor stream independent of std::hash.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h),
                    static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

void fill_gaussian(std::span<float> out, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out) v = static_cast<float>(dist(rng));
}

Tensor<float> init_tensor(const TensorSpec& spec, const ModelConfig& config,
                          std::uint64_t seed) {
  Tensor<float> t(spec.shape);
  switch (spec.role) {
    case TensorRole::kNormScale:
      std::fill(t.data.begin(), t.data.end(), 1.0f);
      break;
    case TensorRole::kProjectionBias:
      break;
    case TensorRole::kPrefixBank: {
      const std::size_t per_stream = t.size() / config.num_streams;
      for (std::size_t s = 0; s < config.num_streams; ++s) {
        auto rng = tensor_rng(seed, spec.name, 1 + s);
        fill_gaussian(std::span<float>(t.data).subspan(s * per_stream, per_stream),
                      config.init_std, rng);
      }
      break;
    }
    case TensorRole::kAggregator:
      if (spec.name == names::kAggFc1Bias || spec.name == names::kAggFc2Bias) {
        break;
      }
      [[fallthrough]];
    default: {
      auto rng = tensor_rng(seed, spec.name, 0);
      fill_gaussian(t.data, config.init_std, rng);
    }
  }
  return t;
}

}  // namespace

ParameterStore<float> build_model(const ModelConfig& config,
                                  std::uint64_t seed) {
  ParameterStore<float> store;
  for (const auto& spec : parameter_layout(config)) {
    store.add(spec.name, init_tensor(spec, config, seed));
  }
  return store;
}

void inject_parallel_parameters(ParameterStore<float>& store,
                                const ModelConfig& config,
                                std::uint64_t seed) {
  if (!config.has_parallel_streams()) return;
  check_store_matches(store, config.with_streams(1));
  for (const auto& spec : parameter_layout(config)) {
    if (is_backbone_tensor(spec.name)) continue;
    store.add(spec.name, init_tensor(spec, config, seed));
  }
}

template <typename T>
void check_store_matches(const ParameterStore<T>& store,
                         const ModelConfig& config) {
  const auto layout = parameter_layout(config);
  if (layout.size() != store.size()) {
    throw ConfigError("parameter store has " + std::to_string(store.size()) +
                      " tensors, config implies " +
                      std::to_string(layout.size()));
  }
  for (const auto& spec : layout) {
    if (!store.contains(spec.name)) {
      throw ConfigError("parameter store lacks tensor " + spec.name);
    }
    const auto& t = store.at(spec.name);
    if (t.shape != spec.shape || t.size() != shape_size(spec.shape)) {
      throw ConfigError("tensor " + spec.name + " has shape " +
                        shape_string(t.shape) + ", expected " +
                        shape_string(spec.shape));
    }
  }
}

namespace {

ParameterCounts finish_counts(std::uint64_t total, std::uint64_t introduced,
                              const ModelConfig& config) {
  ParameterCounts c;
  c.total = total;
  c.embedding = static_cast<std::uint64_t>(config.vocab_size) *
                config.hidden_size;
  c.non_embedding = c.total - c.embedding;
  c.introduced_per_stream =
      config.has_parallel_streams()
          ? static_cast<double>(introduced) /
                static_cast<double>(config.num_streams)
          : 0.0;
  return c;
}

}  // namespace

template <typename T>
ParameterCounts count_parameters(const ParameterStore<T>& store,
                                 const ModelConfig& config) {
  std::uint64_t total = 0;
  std::uint64_t introduced = 0;
  for (const auto& [name, t] : store) {
    total += t.size();
    if (!is_backbone_tensor(name)) introduced += t.size();
  }
  return finish_counts(total, introduced, config);
}

ParameterCounts count_parameters(const ModelConfig& config) {
  std::uint64_t total = 0;
  std::uint64_t introduced = 0;
  for (const auto& spec : parameter_layout(config)) {
    const auto n = shape_size(spec.shape);
    total += n;
    if (!is_backbone_tensor(spec.name)) introduced += n;
  }
  return finish_counts(total, introduced, config);
}

template void check_store_matches(const ParameterStore<float>&,
                                  const ModelConfig&);
template void check_store_matches(const ParameterStore<double>&,
                                  const ModelConfig&);
template ParameterCounts count_parameters(const ParameterStore<float>&,
                                          const ModelConfig&);
template ParameterCounts count_parameters(const ParameterStore<double>&,
                                          const ModelConfig&);

}  // namespace parscale
