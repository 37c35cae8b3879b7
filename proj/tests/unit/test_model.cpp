#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "../support/gradcheck.hpp"
#include "../support/reference_model.hpp"
#include "parscale/common/errors.hpp"
#include "parscale/model/aggregation.hpp"
#include "parscale/model/parameters.hpp"
#include "parscale/model/generate.hpp"
#include "parscale/model/transformer.hpp"

using namespace parscale;
using parscale::testing::gradcheck_config;
using parscale::testing::random_tokens;

namespace {

ModelConfig toy_config(std::size_t p) {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden_size = 16;
  c.intermediate_size = 32;
  c.num_heads = 4;
  c.num_kv_groups = 2;
  c.vocab_size = 19;
  c.max_seq_len = 24;
  c.num_streams = p;
  c.prefix_len = 3;
  c.init_std = 0.2;
  return c;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("build_model is deterministic in (config, seed)") {
  const auto cfg = toy_config(3);
  const auto a = build_model(cfg, 11);
  const auto b = build_model(cfg, 11);
  const auto c = build_model(cfg, 12);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const auto& [name, t] : a) {
    if (name.find("norm.weight") != std::string::npos) {
      for (float v : t.data) REQUIRE(v == 1.0f);
    }
  }
}

TEST_CASE("single-stream store has no prefix bank or aggregation head") {
  const auto store = build_model(toy_config(1), 1);
  CHECK_FALSE(store.contains(names::kPrefixBank));
  for (const auto& name : store.names()) {
    CHECK(name.rfind("aggregator.", 0) != 0);
  }
}

TEST_CASE("prefix streams are initialized distinctly") {
  const auto cfg = toy_config(4);
  const auto store = build_model(cfg, 5);
  const auto& bank = store.at(names::kPrefixBank).data;
  const std::size_t per = bank.size() / 4;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) {
      CHECK_FALSE(std::equal(bank.begin() + i * per, bank.begin() + (i + 1) * per,
                             bank.begin() + j * per));
    }
  }
}

TEST_CASE("invalid configurations name the violated invariant") {
  auto cfg = toy_config(2);
  cfg.num_heads = 3;
  CHECK_THROWS_WITH_AS(build_model(cfg, 0),
                       doctest::Contains("hidden_size = num_heads * head_dim"),
                       ConfigError);
  cfg = toy_config(2);
  cfg.num_kv_groups = 3;
  CHECK_THROWS_WITH_AS(build_model(cfg, 0),
                       doctest::Contains("divisible by num_kv_groups"),
                       ConfigError);
  cfg = toy_config(2);
  cfg.prefix_len = 0;
  CHECK_THROWS_AS(build_model(cfg, 0), ConfigError);
  cfg = toy_config(1);
  cfg.prefix_len = 0;
  CHECK_NOTHROW(build_model(cfg, 0));
  cfg = toy_config(2);
  cfg.smoothing_epsilon = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("count_parameters") {
  SUBCASE("P = 1 introduces nothing") {
    const auto cfg = toy_config(1);
    const auto c = count_parameters(build_model(cfg, 0), cfg);
    CHECK(c.introduced_per_stream == 0.0);
    CHECK(c.embedding == cfg.vocab_size * cfg.hidden_size);
    CHECK(c.non_embedding == c.total - c.embedding);
  }
  SUBCASE("desk config against independent shape arithmetic") {
    const auto cfg = presets::desk(4);
    const std::uint64_t d = 128, L = 4, inter = 512, kv = 64, V = 256, P = 4,
                        lp = 16;
    const std::uint64_t per_layer = (d * d + d) + 2 * (d * kv + kv) + d * d +
                                    3 * d * inter + 2 * d;
    const std::uint64_t backbone = L * per_layer + d;
    const std::uint64_t prefix = P * L * 2 * lp * kv;
    const std::uint64_t head = (P * d * d + d) + (d * P + P);
    const auto store = build_model(cfg, 0);
    const auto c = count_parameters(store, cfg);
    CHECK(c.embedding == V * d);
    CHECK(c.non_embedding == backbone + prefix + head);
    CHECK(c.introduced_per_stream ==
          doctest::Approx(static_cast<double>(prefix + head) / P));
    const auto from_layout = count_parameters(cfg);
    CHECK(from_layout.total == c.total);
    CHECK(from_layout.introduced_per_stream == c.introduced_per_stream);
  }
  SUBCASE("wide preset, hidden 896") {
    const auto c = count_parameters(presets::wide(896, 1));
    CHECK(std::abs(static_cast<double>(c.non_embedding) - 535813376.0) <=
          0.001 * 535813376.0);
  }
}

TEST_CASE("forward_parallel with P = 1 matches the scalar reference") {
  const auto cfg = toy_config(1);
  const auto st = build_model(cfg, 21).cast<double>();
  const auto x = random_tokens(2, 6, cfg.vocab_size, 4);
  const auto out = forward_parallel(st, cfg, x);
  const auto ref = parscale::testing::reference_stream(st, cfg, x, 0);
  CHECK(max_abs_diff(out.probs, ref.probs) < 1e-6);
  CHECK(max_abs_diff(out.stream_hidden, ref.hidden) < 1e-6);
  for (double w : out.weights) CHECK(w == 1.0);
}

TEST_CASE("every stream matches the scalar reference and the mixture is exact") {
  const auto cfg = toy_config(3);
  const auto st = build_model(cfg, 8).cast<double>();
  const auto x = random_tokens(1, 3, cfg.vocab_size, 9);
  const auto out = forward_parallel(st, cfg, x);
  const std::size_t rows = 3, V = cfg.vocab_size, d = cfg.hidden_size, P = 3;
  for (std::size_t s = 0; s < P; ++s) {
    const auto ref = parscale::testing::reference_stream(st, cfg, x, s);
    const auto probs = out.probs_of(s);
    const auto hidden = out.hidden_of(s);
    CHECK(max_abs_diff({probs.begin(), probs.end()}, ref.probs) < 1e-9);
    CHECK(max_abs_diff({hidden.begin(), hidden.end()}, ref.hidden) < 1e-9);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> concat;
    for (std::size_t s = 0; s < P; ++s) {
      const auto h = out.hidden_of(s).subspan(r * d, d);
      concat.insert(concat.end(), h.begin(), h.end());
    }
    auto w = parscale::testing::reference_aggregation_weights(st, cfg, concat);
    for (double& v : w) v = v * (1.0 - cfg.smoothing_epsilon) + cfg.smoothing_epsilon / P;
    for (std::size_t s = 0; s < P; ++s) CHECK(out.weights[r * P + s] == doctest::Approx(w[s]).epsilon(1e-12));
    // External mixture over the emitted per-stream distributions.
    for (std::size_t v = 0; v < V; ++v) {
      double mix = 0.0;
      for (std::size_t s = 0; s < P; ++s) {
        mix += out.weights[r * P + s] * out.probs_of(s)[r * V + v];
      }
      CHECK(std::abs(out.probs[r * V + v] - mix) < 1e-12);
    }
  }
}

TEST_CASE("identical prefixes with a zeroed head collapse to one stream") {
  const auto cfg = toy_config(2);
  auto st = build_model(cfg, 3);
  auto& bank = st.at(names::kPrefixBank).data;
  const std::size_t half = bank.size() / 2;
  std::copy(bank.begin(), bank.begin() + half, bank.begin() + half);
  const auto x = random_tokens(2, 5, cfg.vocab_size, 1);
  {
    // Equal prefixes alone: equal streams, and the mixture equals them
    // whatever the weights are.
    const auto out = forward_parallel(st, cfg, x);
    const auto p0 = out.probs_of(0), p1 = out.probs_of(1);
    CHECK(std::equal(p0.begin(), p0.end(), p1.begin()));
    for (std::size_t i = 0; i < out.probs.size(); ++i) {
      CHECK(std::abs(out.probs[i] - p0[i]) < 1e-6);
    }
  }
  for (const char* n : {"aggregator.fc1.weight", "aggregator.fc1.bias",
                        "aggregator.fc2.weight", "aggregator.fc2.bias"}) {
    auto& t = st.at(n).data;
    std::fill(t.begin(), t.end(), 0.0f);
  }
  const auto out = forward_parallel(st, cfg, x);
  for (float w : out.weights) CHECK(w == doctest::Approx(0.5));
  const auto p0 = out.probs_of(0);
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    CHECK(std::abs(out.probs[i] - p0[i]) < 1e-6);
  }
}

TEST_CASE("perturbing one prefix leaves other streams bitwise unchanged") {
  const auto cfg = toy_config(3);
  auto st = build_model(cfg, 13);
  const auto x = random_tokens(2, 4, cfg.vocab_size, 2);
  const auto before = forward_parallel(st, cfg, x);
  auto& bank = st.at(names::kPrefixBank).data;
  const std::size_t per = bank.size() / 3;
  for (std::size_t i = per; i < 2 * per; ++i) bank[i] += 0.05f;
  const auto after = forward_parallel(st, cfg, x);
  for (std::size_t s : {0u, 2u}) {
    const auto a = before.hidden_of(s), b = after.hidden_of(s);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  const auto a = before.hidden_of(1), b = after.hidden_of(1);
  CHECK_FALSE(std::equal(a.begin(), a.end(), b.begin()));
}

TEST_CASE("aggregated distribution is causal") {
  const auto cfg = toy_config(3);
  const auto st = build_model(cfg, 17);
  const std::size_t T = 7, V = cfg.vocab_size;
  const auto x = random_tokens(1, T, V, 3);
  const auto base = forward_parallel(st, cfg, x);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    auto changed = x;
    for (std::size_t u = t + 1; u < T; ++u) {
      changed.ids[u] = (changed.ids[u] + 5) % static_cast<std::int32_t>(V);
    }
    const auto out = forward_parallel(st, cfg, changed);
    for (std::size_t u = 0; u <= t; ++u) {
      for (std::size_t v = 0; v < V; ++v) {
        REQUIRE(out.probs[u * V + v] == base.probs[u * V + v]);
      }
    }
  }
}

TEST_CASE("simplex preservation on random models and inputs") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t p = 1 + rng() % 4;
    auto cfg = toy_config(p);
    cfg.init_std = 0.05 + 0.5 * static_cast<double>(rng() % 100) / 100.0;
    cfg.smoothing_epsilon = static_cast<double>(rng() % 50) / 100.0;
    const auto st = build_model(cfg, rng());
    const auto x = random_tokens(2, 1 + rng() % 8, cfg.vocab_size, rng());
    const auto out = forward_parallel(st, cfg, x);
    const std::size_t rows = out.rows(), V = cfg.vocab_size;
    auto check_rows = [&](std::span<const float> values, std::size_t width) {
      for (std::size_t r = 0; r < values.size() / width; ++r) {
        double sum = 0.0;
        for (std::size_t i = 0; i < width; ++i) {
          REQUIRE(values[r * width + i] >= 0.0f);
          sum += values[r * width + i];
        }
        REQUIRE(std::abs(sum - 1.0) < 1e-6);
      }
    };
    check_rows(out.probs, V);
    check_rows(out.stream_probs, V);
    check_rows(out.weights, p);
    const float floor = static_cast<float>(cfg.smoothing_epsilon / p);
    for (std::size_t i = 0; i < rows * p; ++i) {
      REQUIRE(out.weights[i] >= floor);
      REQUIRE(out.weights[i] <= 1.0 - cfg.smoothing_epsilon + cfg.smoothing_epsilon / p + 1e-6);
    }
  }
}

TEST_CASE("forward_parallel input errors") {
  const auto cfg = toy_config(2);
  const auto st = build_model(cfg, 1);
  auto x = random_tokens(1, 4, cfg.vocab_size, 1);
  x.ids[2] = static_cast<std::int32_t>(cfg.vocab_size);
  CHECK_THROWS_WITH_AS(forward_parallel(st, cfg, x),
                       doctest::Contains("out of range"), InputError);
  const auto long_x = random_tokens(1, cfg.max_seq_len - cfg.prefix_len + 1,
                                    cfg.vocab_size, 2);
  CHECK_THROWS_WITH_AS(forward_parallel(st, cfg, long_x),
                       doctest::Contains("sequence too long"), InputError);
  const auto fits = random_tokens(1, cfg.max_seq_len - cfg.prefix_len,
                                  cfg.vocab_size, 2);
  CHECK_NOTHROW(forward_parallel(st, cfg, fits));
}

TEST_CASE("compute_aggregation_weights") {
  const auto cfg = toy_config(3);
  auto st = build_model(cfg, 4).cast<double>();
  const std::size_t rows = 5, d = cfg.hidden_size, P = 3;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> hidden(P * rows * d);
  for (auto& v : hidden) v = n(rng);
  const auto head = AggregationHeadView<double>::from_store(st, cfg);

  SUBCASE("matches straight-line recomputation") {
    const auto w = compute_aggregation_weights<double>(hidden, rows, head);
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> concat;
      for (std::size_t s = 0; s < P; ++s) {
        concat.insert(concat.end(), hidden.begin() + (s * rows + r) * d,
                      hidden.begin() + (s * rows + r + 1) * d);
      }
      const auto ref = parscale::testing::reference_aggregation_weights(st, cfg, concat);
      for (std::size_t s = 0; s < P; ++s) CHECK(w[r * P + s] == doctest::Approx(ref[s]).epsilon(1e-12));
    }
  }
  SUBCASE("shift invariance of the softmax") {
    const auto w0 = compute_aggregation_weights<double>(hidden, rows, head);
    for (auto& b : st.at(names::kAggFc2Bias).data) b += 3.25;
    const auto w1 = compute_aggregation_weights<double>(
        hidden, rows, AggregationHeadView<double>::from_store(st, cfg));
    for (std::size_t i = 0; i < w0.size(); ++i) CHECK(w1[i] == doctest::Approx(w0[i]).epsilon(1e-12));
  }
  SUBCASE("zero head gives uniform weights") {
    for (const char* name : {"aggregator.fc1.weight", "aggregator.fc1.bias",
                             "aggregator.fc2.weight", "aggregator.fc2.bias"}) {
      auto& t = st.at(name).data;
      std::fill(t.begin(), t.end(), 0.0);
    }
    const auto w = compute_aggregation_weights<double>(
        hidden, rows, AggregationHeadView<double>::from_store(st, cfg));
    for (double v : w) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("P = 1 is a contract violation") {
    const auto cfg1 = toy_config(1);
    const auto st1 = build_model(cfg1, 1).cast<double>();
    CHECK_THROWS_AS(AggregationHeadView<double>::from_store(st1, cfg1),
                    ContractError);
  }
}

TEST_CASE("smooth_weights") {
  std::vector<double> a{1.0, 0.0};
  smooth_weights<double>(a, 0.1);
  CHECK(a[0] == doctest::Approx(0.95));
  CHECK(a[1] == doctest::Approx(0.05));

  std::vector<double> b{0.7, 0.2, 0.1, 0.0};
  smooth_weights<double>(b, 0.1);
  CHECK(b[0] == doctest::Approx(0.655));
  CHECK(b[1] == doctest::Approx(0.205));
  CHECK(b[2] == doctest::Approx(0.115));
  CHECK(b[3] == doctest::Approx(0.025));

  for (double eps : {0.0, 0.1, 0.5, 0.9}) {
    std::vector<double> u(4, 0.25);
    smooth_weights<double>(u, eps);
    for (double v : u) CHECK(v == doctest::Approx(0.25));
  }
  std::vector<double> bad{1.0};
  CHECK_THROWS_AS(smooth_weights<double>(bad, 1.0), ContractError);
  CHECK_THROWS_AS(smooth_weights<double>(bad, -0.1), ContractError);
}

TEST_CASE("smoothed weights never fall below eps / P") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t p = 2 + rng() % 7;
    std::vector<double> w(p);
    for (auto& v : w) v = trial % 5 == 0 ? 0.0 : u(rng);
    w[rng() % p] += 1.0;
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& v : w) v /= sum;
    const double eps = u(rng) * 0.99;
    smooth_weights<double>(w, eps);
    double total = 0.0;
    for (double v : w) {
      REQUIRE(v >= eps / p);
      total += v;
    }
    REQUIRE(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("cfg_aggregate") {
  const std::vector<double> cond{0.6}, uncond{0.4};
  CHECK(cfg_aggregate(cond, uncond, 1.0)[0] == doctest::Approx(0.8));
  CHECK(std::abs(cfg_aggregate(cond, uncond, 1e-12)[0] - 0.6) < 1e-9);
  const std::vector<double> v{0.1, -2.0, 3.0};
  for (double w : {0.5, 1.0, 7.0}) {
    const auto out = cfg_aggregate(v, v, w);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(out[i] == v[i]);
  }
  CHECK_THROWS_AS(cfg_aggregate(cond, v, 1.0), ContractError);
}

TEST_CASE("cross_entropy_loss") {
  SUBCASE("one-hot correct distribution has zero loss") {
    const std::vector<double> p{0, 1, 0, 1, 0, 0};
    const std::vector<std::int32_t> y{1, 0};
    CHECK(cross_entropy_loss<double>(p, y, 3).value == 0.0);
  }
  SUBCASE("uniform distribution gives log V") {
    const std::vector<double> p(2 * 7, 1.0 / 7.0);
    const std::vector<std::int32_t> y{3, 6};
    CHECK(cross_entropy_loss<double>(p, y, 7).value == doctest::Approx(std::log(7.0)));
  }
  SUBCASE("random batch matches scalar loop") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    const std::size_t rows = 9, V = 5;
    std::vector<double> p(rows * V);
    std::vector<std::int32_t> y(rows);
    double expected = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      double z = 0.0;
      for (std::size_t v = 0; v < V; ++v) z += (p[r * V + v] = u(rng));
      for (std::size_t v = 0; v < V; ++v) p[r * V + v] /= z;
      y[r] = static_cast<std::int32_t>(rng() % V);
      expected += -std::log(p[r * V + y[r]]);
    }
    expected /= rows;
    CHECK(std::abs(cross_entropy_loss<double>(p, y, V).value - expected) < 1e-6);
  }
  SUBCASE("zero probability is clamped and flagged") {
    const std::vector<double> p{1, 0, 0.5, 0.5};
    const std::vector<std::int32_t> y{1, 0};
    const auto loss = cross_entropy_loss<double>(p, y, 2);
    CHECK(loss.clamped_count == 1);
    CHECK(std::isfinite(loss.value));
    CHECK(loss.value == doctest::Approx((-std::log(1e-30) - std::log(0.5)) / 2));
  }
}

TEST_CASE("attribute_streams") {
  const std::vector<double> a{0.6, 0.4};
  CHECK(attribute_streams<double>(a, 2)[0] == 0);
  const std::vector<double> tie{0.5, 0.5};
  CHECK(attribute_streams<double>(tie, 2)[0] == 0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t rows = 40, P = 4;
  std::vector<double> w(rows * P);
  for (auto& v : w) v = std::round(u(rng) * 4.0) / 4.0;  // forces ties
  const auto got = attribute_streams<double>(w, P);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < P; ++s) {
      if (w[r * P + s] > w[r * P + best]) best = s;
    }
    CHECK(got[r] == static_cast<std::int32_t>(best));
  }
}

TEST_CASE("backward matches finite differences") {
  const auto cfg = gradcheck_config();
  const auto store = build_model(cfg, 3);
  REQUIRE(store.element_count() <= 10000);
  const auto x = random_tokens(2, 5, cfg.vocab_size, 1);
  const auto y = random_tokens(2, 5, cfg.vocab_size, 2);

  SUBCASE("64-bit") {
    const auto st = store.cast<double>();
    const auto result = backward(st, cfg, x, y);
    const auto report = parscale::testing::finite_difference_check(
        st, result.grads, cfg, x, y, 4, 1e-5, 1e-8, 77);
    CHECK(report.tensors_covered == store.size());
    CHECK(report.max_rel_error < 1e-6);
  }
  SUBCASE("32-bit") {
    const auto result = backward(store, cfg, x, y);
    const auto report = parscale::testing::finite_difference_check(
        store, result.grads, cfg, x, y, 4, 1e-5, 1e-8, 78);
    CHECK(report.max_rel_error < 1e-3);
  }
}

TEST_CASE("backward loss equals the forward loss") {
  const auto cfg = toy_config(3);
  const auto st = build_model(cfg, 6);
  const auto x = random_tokens(2, 5, cfg.vocab_size, 1);
  const auto y = random_tokens(2, 5, cfg.vocab_size, 2);
  const auto result = backward(st, cfg, x, y);
  const auto out = forward_parallel(st, cfg, x);
  CHECK(result.loss.value == cross_entropy_loss<float>(out.probs, y.ids, cfg.vocab_size).value);
  CHECK(result.loss.value == evaluate_loss(st, cfg, x, y).value);
}

TEST_CASE("freeze-backbone gradients cover only the introduced tensors") {
  const auto cfg = toy_config(2);
  const auto st = build_model(cfg, 6);
  const auto x = random_tokens(1, 5, cfg.vocab_size, 1);
  const auto y = random_tokens(1, 5, cfg.vocab_size, 2);
  const auto frozen = backward(st, cfg, x, y, {.freeze_backbone = true});
  const auto full = backward(st, cfg, x, y);
  CHECK(frozen.grads.size() == 5);
  for (const auto& [name, g] : frozen.grads) {
    CHECK_FALSE(is_backbone_tensor(name));
    CHECK(g == full.grads.at(name));
  }
  CHECK(full.grads.size() == st.size());
}

TEST_CASE("backward is bitwise reproducible across heap layouts") {
  const auto cfg = toy_config(3);
  const auto x = random_tokens(2, 7, cfg.vocab_size, 1);
  const auto y = random_tokens(2, 7, cfg.vocab_size, 2);
  const auto reference = backward(build_model(cfg, 6), cfg, x, y);
  std::vector<std::vector<char>> junk;
  for (std::size_t shift = 1; shift < 64; shift += 7) {
    junk.emplace_back(shift);  // moves later allocations to new addresses
    const auto store = build_model(cfg, 6);
    const auto again = backward(store, cfg, x, y);
    CHECK(again.loss.value == reference.loss.value);
    for (const auto& [name, g] : reference.grads) REQUIRE(again.grads.at(name) == g);
  }
}

TEST_CASE("greedy generation is deterministic and follows the argmax") {
  auto c = presets::desk(3);
  c.max_seq_len = 24;
  c.prefix_len = 4;
  const auto store = build_model(c, 17);
  const std::vector<std::int32_t> prompt{10, 20, 30};
  const auto a = generate_greedy(store, c, prompt, 25);
  const auto b = generate_greedy(store, c, prompt, 25);
  CHECK(a.tokens == b.tokens);
  REQUIRE(a.steps.size() == 25);
  CHECK(a.steps[0].position == 3);
  CHECK(a.steps[24].position == 27);

  // First step equals the argmax of a direct forward pass.
  const auto fwd = forward_parallel(store, c, TokenBatch(1, 3, prompt));
  const float* last = fwd.probs.data() + 2 * c.vocab_size;
  CHECK(a.tokens[0] == std::max_element(last, last + c.vocab_size) - last);
  for (const auto& s : a.steps) {
    REQUIRE(s.weights.size() == 3);
    const auto heaviest = std::max_element(s.weights.begin(), s.weights.end());
    CHECK(s.stream == heaviest - s.weights.begin());
  }

  CHECK_THROWS_AS(generate_greedy(store, c, prompt, 0), ContractError);
  CHECK_THROWS_AS(generate_greedy(store, c, std::vector<std::int32_t>(21, 1), 1), ContractError);
  CHECK_NOTHROW(generate_greedy(store, c, std::vector<std::int32_t>(20, 1), 1));

  const auto single = build_model(c.with_streams(1), 17);
  for (const auto& s : generate_greedy(single, c.with_streams(1), prompt, 5).steps) {
    CHECK(s.stream == 0);
  }
}
