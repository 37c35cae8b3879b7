#include <doctest.h>

#include <cmath>
#include <algorithm>

#include <json.hpp>

#include "parscale/common/errors.hpp"
#include "parscale/cost/cost.hpp"
#include "parscale/model/parameters.hpp"

using namespace parscale;

namespace {

HardwareSpec unit_hw() {
  HardwareSpec hw;
  hw.memory_bandwidth = 1e9;
  hw.peak_compute = 1e12;
  hw.bytes_per_weight = 2;
  hw.bytes_per_kv_element = 2;
  return hw;
}

// Hand tally for one decode step of one stream in one layer: q, o are d x d;
// k, v are d x kv; gate/up/down are d x ff; attention reads `positions`
// keys for scores and values across all heads.
double layer_flops_by_hand(double d, double kv, double ff, double positions) {
  const double q = 2 * d * d, k = 2 * d * kv, v = 2 * d * kv, o = 2 * d * d;
  const double mlp = 3 * 2 * d * ff;
  const double scores = 2 * d * positions, mix = 2 * d * positions;
  return q + k + v + o + mlp + scores + mix;
}

}  // namespace

TEST_CASE("kv bytes per token per stream for the 896-wide preset") {
  auto c = presets::wide(896, 1);
  CHECK(c.kv_dim() == 112);
  CHECK(kv_memory(c, 1, 1, unit_hw()) == 36.0 * 2 * 112 * 2);
  CHECK(kv_memory(c, 1, 1, unit_hw()) == 16128.0);
}

TEST_CASE("kv memory is zero with no context and no prefix") {
  auto c = presets::desk(1);
  CHECK(kv_memory(c, 4, 0, unit_hw()) == 0.0);
  auto p = presets::desk(4);
  p.prefix_len = 0;
  CHECK(kv_memory(p, 4, 0, unit_hw()) == 0.0);
}

TEST_CASE("kv memory is exactly linear in B, P and T + prefix") {
  auto hw = unit_hw();
  for (std::size_t p : {2u, 3u, 4u, 8u}) {
    auto c = presets::wide(1536, p);
    const double one = kv_memory(c.with_streams(2), 1, 100, hw) / 2.0 /
                       static_cast<double>(100 + c.prefix_len);
    for (std::size_t b : {1u, 2u, 7u}) {
      for (std::size_t t : {0u, 1u, 64u, 1000u}) {
        CHECK(kv_memory(c, b, t, hw) ==
              one * static_cast<double>(b * p * (t + c.prefix_len)));
      }
    }
  }
  auto c1 = presets::desk(1);
  auto c2 = presets::desk(2);
  c2.prefix_len = 0;
  CHECK(kv_memory(c2, 3, 40, hw) == 2.0 * kv_memory(c1, 3, 40, hw));
}

TEST_CASE("kv memory rejects contexts past max_seq_len") {
  auto c = presets::desk(4);
  CHECK_NOTHROW(kv_memory(c, 1, c.max_seq_len - c.prefix_len, unit_hw()));
  CHECK_THROWS_AS(kv_memory(c, 1, c.max_seq_len - c.prefix_len + 1, unit_hw()), ContractError);
}

TEST_CASE("weight memory is total parameters times dtype width") {
  auto hw = unit_hw();
  auto c = presets::wide(896, 1);
  const auto counts = count_parameters(c);
  CHECK(weight_memory(c, hw) == 2.0 * static_cast<double>(counts.total));
  CHECK(counts.non_embedding == doctest::Approx(535813376.0).epsilon(1e-3));
  // Non-embedding bytes alone are 2 x 535.8M; the tied table is on top.
  CHECK(weight_memory(c, hw) - 2.0 * static_cast<double>(counts.embedding) ==
        doctest::Approx(2.0 * 535.8e6).epsilon(5e-3));
  auto hw4 = hw;
  hw4.bytes_per_weight = 4;
  CHECK(weight_memory(c, hw4) == 2.0 * weight_memory(c, hw));
}

TEST_CASE("eight streams add at most 4% weight bytes at fixed width") {
  for (std::size_t h : {896u, 1536u, 2560u}) {
    const double w1 = weight_memory(presets::wide(h, 1), unit_hw());
    const double w8 = weight_memory(presets::wide(h, 8), unit_hw());
    CHECK(w8 > w1);
    CHECK((w8 - w1) / w1 <= 0.04);
  }
}

TEST_CASE("decode flops match a per-layer hand count on the desk config") {
  auto c = presets::desk(1);
  const double d = 128, kv = static_cast<double>(c.kv_dim()), ff = 512, ctx = 20;
  const double by_hand = 4 * layer_flops_by_hand(d, kv, ff, ctx + 1) + 2 * 256 * d;
  CHECK(decode_flops(c, 1, 20) == doctest::Approx(by_hand).epsilon(0.01));

  auto p = presets::desk(4);
  const double positions = ctx + 16 + 1;
  const double agg = 2 * (4 * d * d + d * 4) + 2 * 4 * 256;
  const double by_hand_p = 4 * (4 * layer_flops_by_hand(d, kv, ff, positions) + 2 * 256 * d) + agg;
  CHECK(decode_flops(p, 1, 20) == doctest::Approx(by_hand_p).epsilon(0.01));
}

TEST_CASE("decode flops scale with P and B") {
  for (std::size_t h : {896u, 1536u, 2560u}) {
    const double ratio =
        decode_flops(presets::wide(h, 8), 1, 256) / decode_flops(presets::wide(h, 1), 1, 256);
    CHECK(ratio >= 7.9);
    CHECK(ratio <= 8.1);
  }
  auto c = presets::wide(1536, 4);
  CHECK(decode_flops(c, 4, 128) == doctest::Approx(4.0 * decode_flops(c, 1, 128)).epsilon(1e-12));
}

TEST_CASE("roofline limiting cases") {
  auto c = presets::wide(896, 4);
  auto fast_compute = unit_hw();
  fast_compute.peak_compute = 1e300;
  auto r = decode_latency(c, 2, 64, fast_compute);
  CHECK(r.decode_latency_per_token == r.memory_time);
  CHECK(r.regime == Regime::memory_bound);
  CHECK(r.memory_time == r.total_bytes / fast_compute.memory_bandwidth);

  auto fast_memory = unit_hw();
  fast_memory.memory_bandwidth = 1e300;
  r = decode_latency(c, 2, 64, fast_memory);
  CHECK(r.decode_latency_per_token == r.compute_time);
  CHECK(r.regime == Regime::compute_bound);
}

TEST_CASE("report invariants hold over a sweep") {
  const auto hw = hardware_preset("accelerator");
  for (std::size_t h : {896u, 1536u, 2560u}) {
    for (std::size_t p : {1u, 2u, 4u, 8u}) {
      for (std::size_t b : {1u, 2u, 4u, 8u, 64u}) {
        for (std::size_t t : {0u, 64u, 512u}) {
          const auto r = decode_latency(presets::wide(h, p), b, t, hw);
          CHECK(r.total_bytes == r.weight_bytes + r.kv_bytes);
          CHECK(r.decode_latency_per_token >= r.memory_time);
          CHECK(r.decode_latency_per_token >= r.compute_time);
          CHECK(r.prefill_latency >= r.prefill_flops / (hw.peak_compute * hw.compute_efficiency));
        }
      }
    }
  }
}

TEST_CASE("cost functions are monotone in B, T, P and width") {
  const auto hw = hardware_preset("accelerator");
  const std::size_t widths[] = {896, 1024, 1280, 1536, 2048, 2560};
  const std::size_t streams[] = {1, 2, 4, 8};
  const std::size_t batches[] = {1, 2, 4, 8, 16};
  const std::size_t contexts[] = {0, 64, 128, 512};
  auto at = [&](std::size_t h, std::size_t p, std::size_t b, std::size_t t) {
    return decode_latency(presets::wide(h, p), b, t, hw);
  };
  auto not_less = [](const CostReport& hi, const CostReport& lo) {
    return hi.total_bytes >= lo.total_bytes &&
           hi.decode_flops_per_token >= lo.decode_flops_per_token &&
           hi.prefill_flops >= lo.prefill_flops &&
           hi.decode_latency_per_token >= lo.decode_latency_per_token &&
           hi.prefill_latency >= lo.prefill_latency;
  };
  for (std::size_t i = 1; i < 6; ++i) CHECK(not_less(at(widths[i], 4, 2, 64), at(widths[i - 1], 4, 2, 64)));
  for (std::size_t i = 1; i < 4; ++i) CHECK(not_less(at(1536, streams[i], 2, 64), at(1536, streams[i - 1], 2, 64)));
  for (std::size_t i = 1; i < 5; ++i) CHECK(not_less(at(1536, 4, batches[i], 64), at(1536, 4, batches[i - 1], 64)));
  for (std::size_t i = 1; i < 4; ++i) CHECK(not_less(at(1536, 4, 2, contexts[i]), at(1536, 4, 2, contexts[i - 1])));
}

TEST_CASE("small batches pay far less than the flop ratio") {
  const auto hw = hardware_preset("accelerator");
  const auto r1 = decode_latency(presets::wide(1536, 1), 1, 256, hw);
  const auto r8 = decode_latency(presets::wide(1536, 8), 1, 256, hw);
  CHECK(r8.decode_flops_per_token / r1.decode_flops_per_token > 7.9);
  CHECK(r8.decode_latency_per_token / r1.decode_latency_per_token < 2.0);
  CHECK(r1.regime == Regime::memory_bound);
}

TEST_CASE("identical configs in a pair give unit ratios") {
  const auto hw = hardware_preset("accelerator");
  for (std::size_t p : {1u, 8u}) {
    const auto c = presets::wide(1536, p);
    const auto rows = compare_scaling({{"same", c, c}}, {1, 8}, {64}, hw);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
      CHECK(row.memory_ratio == 1.0);
      CHECK(row.latency_ratio == 1.0);
      CHECK(row.memory_increase_ratio == 1.0);
      CHECK(row.latency_increase_ratio == 1.0);
    }
  }
}

TEST_CASE("capacity-matched pair: parallel streams cost less to grow") {
  const auto hw = hardware_preset("accelerator");
  const ScalingPair pair{"1.6B-P8-vs-4.4B", presets::wide(2560, 1), presets::wide(1536, 8)};
  const auto rows = compare_scaling({pair}, {1, 2, 4, 8}, {256}, hw);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].memory_increase_ratio > 0.0);
  CHECK(rows[0].memory_increase_ratio < 1.0);
  CHECK(rows[0].latency_increase_ratio > 0.0);
  CHECK(rows[0].latency_increase_ratio < 1.0);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].latency_ratio > rows[i - 1].latency_ratio);
    CHECK(rows[i].latency_increase_ratio > rows[i - 1].latency_increase_ratio);
  }
}

TEST_CASE("hardware presets and validation") {
  CHECK_NOTHROW(hardware_preset("accelerator").validate());
  CHECK_NOTHROW(hardware_preset("laptop-cpu").validate());
  CHECK_THROWS_AS(hardware_preset("quantum"), ConfigError);
  auto hw = unit_hw();
  hw.bandwidth_efficiency = 1.5;
  CHECK_THROWS_AS(hw.validate(), ConfigError);
  hw = unit_hw();
  hw.peak_compute = 0;
  CHECK_THROWS_AS(hw.validate(), ConfigError);
}

TEST_CASE("hardware spec round-trips through key-value text") {
  auto hw = hardware_preset("laptop-cpu");
  hw.compute_efficiency = 0.25;
  KeyValueConfig kv;
  hw.write(kv, "hardware.");
  const auto back = HardwareSpec::read(KeyValueConfig::parse(kv.to_string()), "hardware.");
  CHECK(back.name == hw.name);
  CHECK(back.memory_bandwidth == hw.memory_bandwidth);
  CHECK(back.compute_efficiency == 0.25);
  CHECK(back.bytes_per_weight == hw.bytes_per_weight);
}

TEST_CASE("sweep config parsing") {
  const auto sweep = CostSweep::read(KeyValueConfig::parse(
      "hardware.preset = accelerator\n"
      "batches = 1, 2\n"
      "contexts = 64\n"
      "pairs = a\n"
      "pair.a.parscale = wide-1536\n"
      "pair.a.parscale_streams = 8\n"
      "pair.a.param_scaled = wide-2560\n"));
  REQUIRE(sweep.pairs.size() == 1);
  CHECK(sweep.pairs[0].parscale.num_streams == 8);
  CHECK(sweep.pairs[0].param_scaled.num_streams == 1);
  CHECK(sweep.run().size() == 2);

  CHECK_THROWS_AS(CostSweep::read(KeyValueConfig::parse("hardware.presset = accelerator\n")),
                  ConfigError);
  CHECK_THROWS_AS(CostSweep::read(KeyValueConfig::parse("hardware.preset = nope\n")),
                  ConfigError);
}

TEST_CASE("csv and json exports") {
  const auto hw = hardware_preset("accelerator");
  const auto empty = comparison_to_csv({});
  CHECK(std::count(empty.begin(), empty.end(), '\n') == 1);

  const ScalingPair pair{"p", presets::wide(2560, 1), presets::wide(1536, 8)};
  const auto rows = compare_scaling({pair}, {1, 1, 2}, {64}, hw);
  const auto csv = comparison_to_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  // Duplicate sweep points give duplicate rows.
  const auto l1 = csv.find('\n') + 1;
  const auto l2 = csv.find('\n', l1) + 1;
  const auto l3 = csv.find('\n', l2) + 1;
  CHECK(csv.substr(l1, l2 - l1) == csv.substr(l2, l3 - l2));

  const auto j = nlohmann::json::parse(comparison_to_json(rows, hw));
  CHECK(j["hardware"]["preset"] == "accelerator");
  CHECK(j["rows"].size() == 3);
  CHECK(j["rows"][0]["parscale"]["regime"] == "memory-bound");
}

TEST_CASE("shipped sweep: latency grows with batch for every configuration") {
  const auto sweep =
      CostSweep::read(KeyValueConfig::load(std::string(PARSCALE_SOURCE_DIR) + "/configs/cost_sweep.kv"));
  REQUIRE(sweep.pairs.size() == 3);
  const auto rows = sweep.run();
  CHECK(rows.size() == 3 * 4 * 4);
  for (const auto& a : rows) {
    for (const auto& b : rows) {
      if (a.pair != b.pair || a.context != b.context || b.batch <= a.batch) continue;
      CHECK(b.base.decode_latency_per_token >= a.base.decode_latency_per_token);
      CHECK(b.param_scaled.decode_latency_per_token > a.param_scaled.decode_latency_per_token);
      CHECK(b.parscale.decode_latency_per_token > a.parscale.decode_latency_per_token);
      CHECK(b.latency_ratio > a.latency_ratio);
    }
  }
}
