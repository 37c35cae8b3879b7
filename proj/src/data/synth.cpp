#include "parscale/data/synth.hpp"

#include <charconv>
#include <cmath>
#include <random>
#include <string_view>

#include "parscale/common/errors.hpp"

namespace parscale {
namespace {

constexpr std::string_view kSymbols =
    "etaoinshrdlucmfwypvbgkjqxz ETAOINSHRDLUCMFWYPVBGKJQXZ.,;:0123456789";

std::mt19937_64 seeded(std::uint64_t seed, std::initializer_list<std::uint32_t> salt) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  words.insert(words.end(), salt.begin(), salt.end());
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t parse_markov_order(std::string_view id) {
  constexpr std::string_view head = "markov-";
  if (id.substr(0, head.size()) != head) return 0;
  const auto digits = id.substr(head.size());
  std::size_t k = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return 0;
  return k;
}

std::vector<std::int32_t> sample_arith(std::size_t size, std::uint64_t seed) {
  auto rng = seeded(seed, {0x61726974u});
  std::vector<std::int32_t> out;
  out.reserve(size + 16);
  while (out.size() < size) {
    const unsigned a = static_cast<unsigned>(rng() % 1000);
    const unsigned b = static_cast<unsigned>(rng() % 1000);
    const std::string line =
        std::to_string(a) + "+" + std::to_string(b) + "=" + std::to_string(a + b) + "\n";
    for (char c : line) out.push_back(static_cast<unsigned char>(c));
  }
  out.resize(size);
  return out;
}

}  // namespace

std::size_t MarkovTable::contexts() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < order; ++i) n *= symbols();
  return n;
}

MarkovTable make_markov_table(std::size_t order, std::size_t alphabet_size,
                              std::size_t branching, std::uint64_t seed) {
  if (order == 0) throw InputError("markov order must be at least 1");
  if (alphabet_size < 2 || alphabet_size > kSymbols.size()) {
    throw InputError("markov alphabet_size must lie in [2, " +
                     std::to_string(kSymbols.size()) + "]");
  }
  if (branching == 0 || branching > alphabet_size) {
    throw InputError("markov branching must lie in [1, alphabet_size]");
  }
  MarkovTable table;
  table.order = order;
  table.alphabet.assign(kSymbols.begin(), kSymbols.begin() + alphabet_size);
  const std::size_t C = table.contexts(), S = alphabet_size;
  if (C > (std::size_t{1} << 24)) throw InputError("markov table too large");
  table.probs.assign(C * S, 0.0);

  auto rng = seeded(seed, {static_cast<std::uint32_t>(order),
                           static_cast<std::uint32_t>(S),
                           static_cast<std::uint32_t>(branching)});
  std::vector<std::size_t> pool(S);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < S; ++i) pool[i] = i;
    double total = 0.0;
    for (std::size_t j = 0; j < branching; ++j) {
      std::swap(pool[j], pool[j + rng() % (S - j)]);
      // Exponential draws normalized: a flat Dirichlet over the successors.
      const double w = -std::log(1.0 - uniform01(rng));
      table.probs[c * S + pool[j]] = w;
      total += w;
    }
    for (std::size_t i = 0; i < S; ++i) table.probs[c * S + i] /= total;
  }
  return table;
}

std::vector<std::int32_t> sample_markov(const MarkovTable& table,
                                        std::size_t size, std::uint64_t seed) {
  const std::size_t S = table.symbols(), C = table.contexts();
  auto rng = seeded(seed, {0x6d6b7631u});
  std::vector<std::int32_t> out;
  out.reserve(size);
  std::size_t context = 0;
  for (std::size_t i = 0; i < table.order && out.size() < size; ++i) {
    const std::size_t s = rng() % S;
    context = (context * S + s) % C;
    out.push_back(table.alphabet[s]);
  }
  while (out.size() < size) {
    const double u = uniform01(rng);
    const double* row = &table.probs[context * S];
    std::size_t next = S - 1;
    double acc = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      acc += row[s];
      if (u < acc) {
        next = s;
        break;
      }
    }
    // Rounding can leave acc just below 1; fall back to the last live symbol.
    if (row[next] == 0.0) {
      for (std::size_t s = S; s-- > 0;) {
        if (row[s] > 0.0) {
          next = s;
          break;
        }
      }
    }
    context = (context * S + next) % C;
    out.push_back(table.alphabet[next]);
  }
  return out;
}

TokenStream synth_corpus(const SynthSpec& spec) {
  if (spec.size == 0) throw InputError("synthetic corpus size must be positive");
  TokenStream out;
  out.source = "synth:" + spec.generator + ":" + std::to_string(spec.seed);
  if (spec.generator == "arith") {
    out.ids = sample_arith(spec.size, spec.seed);
    return out;
  }
  const std::size_t k = parse_markov_order(spec.generator);
  if (k == 0) throw InputError("unknown synthetic generator: " + spec.generator);
  const auto table = make_markov_table(k, spec.alphabet_size, spec.branching, spec.seed);
  out.ids = sample_markov(table, spec.size, spec.seed);
  return out;
}

}  // namespace parscale
