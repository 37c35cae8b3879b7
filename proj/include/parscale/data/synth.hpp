#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "parscale/data/corpus.hpp"

namespace parscale {

// Order-k chain over a small alphabet of printable bytes. Row c of `probs`
// is the next-symbol distribution for context c, where c encodes the last k
// symbols base alphabet.size(), oldest symbol most significant.
struct MarkovTable {
  std::size_t order = 2;
  std::vector<std::uint8_t> alphabet;
  std::vector<double> probs;  // [alphabet^order, alphabet]

  std::size_t symbols() const { return alphabet.size(); }
  std::size_t contexts() const;
  double prob(std::size_t context, std::size_t next) const {
    return probs[context * symbols() + next];
  }
};

struct SynthSpec {
  std::string generator = "markov-2";  // "markov-<k>" or "arith"
  std::size_t size = 100000;
  std::uint64_t seed = 0;
  std::size_t alphabet_size = 24;  // markov only
  std::size_t branching = 4;       // nonzero successors per context
};

// Deterministic in (generator, alphabet_size, branching, seed).
MarkovTable make_markov_table(std::size_t order, std::size_t alphabet_size,
                              std::size_t branching, std::uint64_t seed);

std::vector<std::int32_t> sample_markov(const MarkovTable& table,
                                        std::size_t size, std::uint64_t seed);

// Throws InputError for size 0 or an unknown generator id.
TokenStream synth_corpus(const SynthSpec& spec);

}  // namespace parscale
