#include "parscale/cost/cost.hpp"

#include <algorithm>

#include <json.hpp>

#include "parscale/common/errors.hpp"
#include "parscale/model/parameters.hpp"

namespace parscale {
namespace {

// Weights touched by matmuls in one stream's forward step, LM head included.
double matmul_params(const ModelConfig& c) {
  const double d = static_cast<double>(c.hidden_size);
  const double kv = static_cast<double>(c.kv_dim());
  const double per_layer = d * d + 2.0 * d * kv + d * d +
                           3.0 * d * static_cast<double>(c.intermediate_size);
  return static_cast<double>(c.num_layers) * per_layer +
         static_cast<double>(c.vocab_size) * d;
}

double aggregation_flops(const ModelConfig& c) {
  if (!c.has_parallel_streams()) return 0.0;
  const double d = static_cast<double>(c.hidden_size);
  const double p = static_cast<double>(c.num_streams);
  return 2.0 * (p * d * d + d * p) + 2.0 * p * static_cast<double>(c.vocab_size);
}

// QK^T plus AV for one query over `positions` keys, all layers.
double attention_flops(const ModelConfig& c, double positions) {
  return 4.0 * static_cast<double>(c.hidden_size) * positions *
         static_cast<double>(c.num_layers);
}

}  // namespace

void HardwareSpec::validate() const {
  auto positive = [&](double v, const char* what) {
    if (!(v > 0.0)) throw ConfigError(std::string("hardware ") + what + " must be positive");
  };
  positive(memory_bandwidth, "memory_bandwidth");
  positive(peak_compute, "peak_compute");
  positive(bytes_per_weight, "bytes_per_weight");
  positive(bytes_per_kv_element, "bytes_per_kv_element");
  if (!(bandwidth_efficiency > 0.0 && bandwidth_efficiency <= 1.0)) {
    throw ConfigError("hardware bandwidth_efficiency must lie in (0, 1]");
  }
  if (!(compute_efficiency > 0.0 && compute_efficiency <= 1.0)) {
    throw ConfigError("hardware compute_efficiency must lie in (0, 1]");
  }
}

void HardwareSpec::write(KeyValueConfig& out, const std::string& prefix) const {
  out.set(prefix + "preset", name);
  out.set(prefix + "memory_bandwidth", format_real(memory_bandwidth));
  out.set(prefix + "peak_compute", format_real(peak_compute));
  out.set(prefix + "bandwidth_efficiency", format_real(bandwidth_efficiency));
  out.set(prefix + "compute_efficiency", format_real(compute_efficiency));
  out.set(prefix + "bytes_per_weight", format_real(bytes_per_weight));
  out.set(prefix + "bytes_per_kv_element", format_real(bytes_per_kv_element));
}

HardwareSpec HardwareSpec::read(const KeyValueConfig& in, const std::string& prefix) {
  HardwareSpec hw = hardware_preset(in.get_string(prefix + "preset", "accelerator"));
  hw.memory_bandwidth = in.get_double(prefix + "memory_bandwidth", hw.memory_bandwidth);
  hw.peak_compute = in.get_double(prefix + "peak_compute", hw.peak_compute);
  hw.bandwidth_efficiency =
      in.get_double(prefix + "bandwidth_efficiency", hw.bandwidth_efficiency);
  hw.compute_efficiency = in.get_double(prefix + "compute_efficiency", hw.compute_efficiency);
  hw.bytes_per_weight = in.get_double(prefix + "bytes_per_weight", hw.bytes_per_weight);
  hw.bytes_per_kv_element =
      in.get_double(prefix + "bytes_per_kv_element", hw.bytes_per_kv_element);
  hw.validate();
  return hw;
}

HardwareSpec hardware_preset(const std::string& name) {
  HardwareSpec hw;
  hw.name = name;
  if (name == "accelerator") {
    hw.memory_bandwidth = 2.0e12;
    hw.peak_compute = 3.12e14;
    hw.bandwidth_efficiency = 0.8;
    hw.compute_efficiency = 0.6;
    hw.bytes_per_weight = 2;
    hw.bytes_per_kv_element = 2;
  } else if (name == "laptop-cpu") {
    hw.memory_bandwidth = 6.0e10;
    hw.peak_compute = 1.0e12;
    hw.bandwidth_efficiency = 0.7;
    hw.compute_efficiency = 0.5;
    hw.bytes_per_weight = 4;
    hw.bytes_per_kv_element = 4;
  } else {
    std::string known;
    for (const auto& n : hardware_preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown hardware preset '" + name + "' (known: " + known + ")");
  }
  return hw;
}

std::vector<std::string> hardware_preset_names() { return {"accelerator", "laptop-cpu"}; }

std::string to_string(Regime r) {
  return r == Regime::memory_bound ? "memory-bound" : "compute-bound";
}

double weight_memory(const ModelConfig& config, const HardwareSpec& hw) {
  return static_cast<double>(count_parameters(config).total) * hw.bytes_per_weight;
}

double kv_memory(const ModelConfig& config, std::size_t batch, std::size_t context,
                 const HardwareSpec& hw) {
  const std::size_t positions = context + config.effective_prefix_len();
  if (positions > config.max_seq_len) {
    throw ContractError("kv_memory: context + prefix_len = " + std::to_string(positions) +
                        " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  }
  return static_cast<double>(batch) * static_cast<double>(config.num_streams) *
         static_cast<double>(positions) * static_cast<double>(config.num_layers) * 2.0 *
         static_cast<double>(config.kv_dim()) * hw.bytes_per_kv_element;
}

double decode_flops(const ModelConfig& config, std::size_t batch, std::size_t context) {
  const double positions =
      static_cast<double>(context + config.effective_prefix_len()) + 1.0;
  const double per_stream = 2.0 * matmul_params(config) + attention_flops(config, positions);
  return static_cast<double>(batch) *
         (static_cast<double>(config.num_streams) * per_stream + aggregation_flops(config));
}

double prefill_flops(const ModelConfig& config, std::size_t batch, std::size_t context) {
  const double T = static_cast<double>(context);
  const double lp = static_cast<double>(config.effective_prefix_len());
  // Token t (0-based) attends over lp + t + 1 positions.
  const double attended = T * lp + T * (T + 1.0) / 2.0;
  const double per_stream =
      2.0 * matmul_params(config) * T +
      4.0 * static_cast<double>(config.hidden_size) * attended *
          static_cast<double>(config.num_layers);
  return static_cast<double>(batch) *
         (static_cast<double>(config.num_streams) * per_stream + aggregation_flops(config) * T);
}

CostReport decode_latency(const ModelConfig& config, std::size_t batch, std::size_t context,
                          const HardwareSpec& hw) {
  config.validate();
  hw.validate();
  CostReport r;
  r.weight_bytes = weight_memory(config, hw);
  r.kv_bytes = kv_memory(config, batch, context, hw);
  r.total_bytes = r.weight_bytes + r.kv_bytes;
  r.decode_flops_per_token = decode_flops(config, batch, context);
  r.prefill_flops = prefill_flops(config, batch, context);
  const double bw = hw.memory_bandwidth * hw.bandwidth_efficiency;
  const double fl = hw.peak_compute * hw.compute_efficiency;
  r.memory_time = r.total_bytes / bw;
  r.compute_time = r.decode_flops_per_token / fl;
  r.decode_latency_per_token = std::max(r.memory_time, r.compute_time);
  r.regime = r.compute_time > r.memory_time ? Regime::compute_bound : Regime::memory_bound;
  r.prefill_latency = std::max(r.total_bytes / bw, r.prefill_flops / fl);
  return r;
}

namespace {

double increase_ratio(double parscale_increase, double param_increase) {
  if (parscale_increase == 0.0 && param_increase == 0.0) return 1.0;
  return parscale_increase / param_increase;
}

}  // namespace

std::vector<ComparisonRow> compare_scaling(const std::vector<ScalingPair>& pairs,
                                           const std::vector<std::size_t>& batches,
                                           const std::vector<std::size_t>& contexts,
                                           const HardwareSpec& hw) {
  std::vector<ComparisonRow> rows;
  for (const auto& pair : pairs) {
    const ModelConfig base = pair.parscale.with_streams(1);
    for (std::size_t b : batches) {
      for (std::size_t t : contexts) {
        ComparisonRow row;
        row.pair = pair.name;
        row.batch = b;
        row.context = t;
        row.base = decode_latency(base, b, t, hw);
        row.param_scaled = decode_latency(pair.param_scaled, b, t, hw);
        row.parscale = decode_latency(pair.parscale, b, t, hw);
        row.memory_increase_ratio =
            increase_ratio(row.parscale.total_bytes - row.base.total_bytes,
                           row.param_scaled.total_bytes - row.base.total_bytes);
        row.latency_increase_ratio = increase_ratio(
            row.parscale.decode_latency_per_token - row.base.decode_latency_per_token,
            row.param_scaled.decode_latency_per_token - row.base.decode_latency_per_token);
        row.memory_ratio = row.parscale.total_bytes / row.param_scaled.total_bytes;
        row.latency_ratio =
            row.parscale.decode_latency_per_token / row.param_scaled.decode_latency_per_token;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

namespace {

std::vector<std::size_t> read_counts(const KeyValueConfig& in, const std::string& key,
                                     std::vector<std::size_t> fallback) {
  if (!in.has(key)) return fallback;
  std::vector<std::size_t> out;
  for (std::int64_t v : in.get_int_list(key)) {
    if (v < 0) throw ConfigError(key + " entries must be non-negative");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    std::string item = text.substr(start, end - start);
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    item = first == std::string::npos ? "" : item.substr(first, last - first + 1);
    if (!item.empty()) out.push_back(item);
    start = end + 1;
  }
  return out;
}

}  // namespace

CostSweep CostSweep::read(const KeyValueConfig& in) {
  CostSweep sweep;
  sweep.hardware = HardwareSpec::read(in, "hardware.");
  sweep.batches = read_counts(in, "batches", {1, 2, 4, 8});
  sweep.contexts = read_counts(in, "contexts", {64, 128, 256, 512});
  for (const auto& name : split_names(in.get_string("pairs", ""))) {
    const std::string p = "pair." + name + ".";
    ScalingPair pair;
    pair.name = name;
    const auto streams = [&](const std::string& key) {
      const std::int64_t v = in.get_int(p + key, 1);
      if (v < 1) throw ConfigError(p + key + " must be at least 1");
      return static_cast<std::size_t>(v);
    };
    pair.parscale =
        presets::by_name(in.get_string(p + "parscale"), streams("parscale_streams"));
    pair.param_scaled =
        presets::by_name(in.get_string(p + "param_scaled"), streams("param_scaled_streams"));
    sweep.pairs.push_back(pair);
  }
  const auto unused = in.unused_keys();
  if (!unused.empty()) throw ConfigError("unknown cost sweep key: " + unused.front());
  return sweep;
}

std::vector<ComparisonRow> CostSweep::run() const {
  return compare_scaling(pairs, batches, contexts, hardware);
}

std::string comparison_to_csv(const std::vector<ComparisonRow>& rows) {
  std::string out =
      "pair,batch,context,"
      "base_total_bytes,param_scaled_total_bytes,parscale_total_bytes,"
      "base_decode_flops,param_scaled_decode_flops,parscale_decode_flops,"
      "base_latency_s,param_scaled_latency_s,parscale_latency_s,"
      "param_scaled_prefill_s,parscale_prefill_s,param_scaled_regime,parscale_regime,"
      "memory_increase_ratio,latency_increase_ratio,memory_ratio,latency_ratio\n";
  for (const auto& row : rows) {
    const CostReport* reports[] = {&row.base, &row.param_scaled, &row.parscale};
    out += row.pair + "," + std::to_string(row.batch) + "," + std::to_string(row.context);
    for (const auto* r : reports) out += "," + format_real(r->total_bytes);
    for (const auto* r : reports) out += "," + format_real(r->decode_flops_per_token);
    for (const auto* r : reports) out += "," + format_real(r->decode_latency_per_token);
    out += "," + format_real(row.param_scaled.prefill_latency) + "," +
           format_real(row.parscale.prefill_latency) + "," + to_string(row.param_scaled.regime) +
           "," + to_string(row.parscale.regime) + "," + format_real(row.memory_increase_ratio) +
           "," + format_real(row.latency_increase_ratio) + "," + format_real(row.memory_ratio) +
           "," + format_real(row.latency_ratio) + "\n";
  }
  return out;
}

std::string comparison_to_json(const std::vector<ComparisonRow>& rows, const HardwareSpec& hw) {
  auto report = [](const CostReport& r) {
    nlohmann::ordered_json j;
    j["weight_bytes"] = r.weight_bytes;
    j["kv_bytes"] = r.kv_bytes;
    j["total_bytes"] = r.total_bytes;
    j["decode_flops_per_token"] = r.decode_flops_per_token;
    j["prefill_flops"] = r.prefill_flops;
    j["memory_time_s"] = r.memory_time;
    j["compute_time_s"] = r.compute_time;
    j["decode_latency_per_token_s"] = r.decode_latency_per_token;
    j["prefill_latency_s"] = r.prefill_latency;
    j["regime"] = to_string(r.regime);
    return j;
  };
  nlohmann::ordered_json j;
  nlohmann::ordered_json h;
  h["preset"] = hw.name;
  h["memory_bandwidth"] = hw.memory_bandwidth;
  h["peak_compute"] = hw.peak_compute;
  h["bandwidth_efficiency"] = hw.bandwidth_efficiency;
  h["compute_efficiency"] = hw.compute_efficiency;
  h["bytes_per_weight"] = hw.bytes_per_weight;
  h["bytes_per_kv_element"] = hw.bytes_per_kv_element;
  j["hardware"] = h;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json r;
    r["pair"] = row.pair;
    r["batch"] = row.batch;
    r["context"] = row.context;
    r["base"] = report(row.base);
    r["param_scaled"] = report(row.param_scaled);
    r["parscale"] = report(row.parscale);
    r["memory_increase_ratio"] = row.memory_increase_ratio;
    r["latency_increase_ratio"] = row.latency_increase_ratio;
    r["memory_ratio"] = row.memory_ratio;
    r["latency_ratio"] = row.latency_ratio;
    j["rows"].push_back(r);
  }
  return j.dump(2) + "\n";
}

}  // namespace parscale
