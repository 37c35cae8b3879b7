#include "parscale/model/config.hpp"

#include <array>
#include <utility>

#include "parscale/common/errors.hpp"

namespace parscale {

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid model config: ") + what);
  };
  require(num_layers > 0, "num_layers > 0");
  require(hidden_size > 0, "hidden_size > 0");
  require(intermediate_size > 0, "intermediate_size > 0");
  require(num_heads > 0, "num_heads > 0");
  require(num_kv_groups > 0, "num_kv_groups > 0");
  require(hidden_size % num_heads == 0,
          "hidden_size = num_heads * head_dim");
  require(num_heads % num_kv_groups == 0,
          "num_heads divisible by num_kv_groups");
  require(head_dim() % 2 == 0, "head_dim even (rotary pairs)");
  require(vocab_size > 0, "vocab_size > 0");
  require(num_streams >= 1, "num_streams >= 1");
  require(num_streams == 1 || prefix_len > 0,
          "prefix_len > 0 when num_streams > 1");
  require(max_seq_len > effective_prefix_len(),
          "max_seq_len > prefix_len");
  require(smoothing_epsilon >= 0.0 && smoothing_epsilon < 1.0,
          "smoothing_epsilon in [0, 1)");
  require(rope_base > 0.0, "rope_base > 0");
  require(init_std > 0.0, "init_std > 0");
  require(norm_eps > 0.0, "norm_eps > 0");
}

ModelConfig ModelConfig::with_streams(std::size_t p) const {
  ModelConfig out = *this;
  out.num_streams = p;
  return out;
}

void ModelConfig::write(KeyValueConfig& out, const std::string& prefix) const {
  auto put = [&](const char* k, const std::string& v) { out.set(prefix + k, v); };
  put("num_layers", std::to_string(num_layers));
  put("hidden_size", std::to_string(hidden_size));
  put("intermediate_size", std::to_string(intermediate_size));
  put("num_heads", std::to_string(num_heads));
  put("num_kv_groups", std::to_string(num_kv_groups));
  put("vocab_size", std::to_string(vocab_size));
  put("max_seq_len", std::to_string(max_seq_len));
  put("num_streams", std::to_string(num_streams));
  put("prefix_len", std::to_string(prefix_len));
  put("smoothing_epsilon", format_real(smoothing_epsilon));
  put("rope_base", format_real(rope_base));
  put("init_std", format_real(init_std));
  put("norm_eps", format_real(norm_eps));
}

ModelConfig ModelConfig::read(const KeyValueConfig& in,
                              const std::string& prefix) {
  ModelConfig c;
  auto count = [&](const char* k, std::size_t fallback) {
    const auto v = in.get_int(prefix + k, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(prefix + k + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.num_layers = count("num_layers", c.num_layers);
  c.hidden_size = count("hidden_size", c.hidden_size);
  c.intermediate_size = count("intermediate_size", c.intermediate_size);
  c.num_heads = count("num_heads", c.num_heads);
  c.num_kv_groups = count("num_kv_groups", c.num_kv_groups);
  c.vocab_size = count("vocab_size", c.vocab_size);
  c.max_seq_len = count("max_seq_len", c.max_seq_len);
  c.num_streams = count("num_streams", c.num_streams);
  c.prefix_len = count("prefix_len", c.prefix_len);
  c.smoothing_epsilon =
      in.get_double(prefix + "smoothing_epsilon", c.smoothing_epsilon);
  c.rope_base = in.get_double(prefix + "rope_base", c.rope_base);
  c.init_std = in.get_double(prefix + "init_std", c.init_std);
  c.norm_eps = in.get_double(prefix + "norm_eps", c.norm_eps);
  return c;
}

namespace presets {

ModelConfig desk(std::size_t num_streams) {
  ModelConfig c;
  c.num_layers = 4;
  c.hidden_size = 128;
  c.intermediate_size = 512;
  c.num_heads = 4;
  c.num_kv_groups = 2;
  c.vocab_size = 256;
  c.max_seq_len = 128;
  c.num_streams = num_streams;
  c.prefix_len = 16;
  return c;
}

ModelConfig wide(std::size_t hidden_size, std::size_t num_streams) {
  static constexpr std::array<std::pair<std::size_t, std::size_t>, 6> kWidths{{
      {896, 4864},
      {1024, 5504},
      {1280, 6912},
      {1536, 8320},
      {2048, 11008},
      {2560, 13824},
  }};
  for (const auto& [hidden, intermediate] : kWidths) {
    if (hidden != hidden_size) continue;
    ModelConfig c;
    c.num_layers = 36;
    c.hidden_size = hidden;
    c.intermediate_size = intermediate;
    c.num_heads = 16;
    c.num_kv_groups = 2;
    c.vocab_size = 151936;
    c.max_seq_len = 4096;
    c.num_streams = num_streams;
    c.prefix_len = 48;
    c.rope_base = 10000.0;
    return c;
  }
  throw ConfigError("no wide preset with hidden_size " +
                    std::to_string(hidden_size));
}

ModelConfig by_name(const std::string& name, std::size_t num_streams) {
  if (name == "desk") return desk(num_streams);
  if (name.rfind("wide-", 0) == 0) {
    try {
      return wide(std::stoul(name.substr(5)), num_streams);
    } catch (const std::invalid_argument&) {
    } catch (const std::out_of_range&) {
    }
  }
  throw ConfigError("unknown model preset: " + name);
}

}  // namespace presets
}  // namespace parscale
