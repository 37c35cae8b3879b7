#include "parscale/data/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "parscale/common/errors.hpp"

namespace parscale {

TokenStream tokenize(std::string_view bytes, std::string source) {
  TokenStream out;
  out.source = std::move(source);
  out.ids.reserve(bytes.size());
  for (char c : bytes) out.ids.push_back(static_cast<unsigned char>(c));
  return out;
}

std::string detokenize(std::span<const std::int32_t> ids) {
  std::string out;
  out.reserve(ids.size());
  for (std::int32_t id : ids) {
    if (id < 0 || id >= static_cast<std::int32_t>(kByteVocab)) {
      throw InputError("token id " + std::to_string(id) + " is not a byte");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

TokenStream ingest_corpus(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw InputError("corpus not found or not a regular file: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) throw InputError("error reading corpus: " + path.string());
  if (bytes.empty()) throw InputError("corpus is empty: " + path.string());
  return tokenize(bytes, path.string());
}

std::pair<TokenStream, TokenStream> split_stream(const TokenStream& stream,
                                                 double holdout) {
  if (!(holdout > 0.0 && holdout < 1.0)) {
    throw InputError("holdout fraction must lie in (0, 1)");
  }
  const auto cut = static_cast<std::size_t>(
      static_cast<double>(stream.size()) * (1.0 - holdout));
  TokenStream train{{stream.ids.begin(), stream.ids.begin() + cut},
                    stream.vocab_size, stream.source + "[train]"};
  TokenStream val{{stream.ids.begin() + cut, stream.ids.end()},
                  stream.vocab_size, stream.source + "[val]"};
  return {std::move(train), std::move(val)};
}

std::size_t windows_per_epoch(std::size_t stream_len, std::size_t seq_len) {
  if (seq_len == 0 || stream_len < 2) return 0;
  return (stream_len - 1) / seq_len;
}

std::size_t batches_per_epoch(std::size_t stream_len, const BatchPlan& plan) {
  if (plan.batch_size == 0) return 0;
  return windows_per_epoch(stream_len, plan.seq_len) / plan.batch_size;
}

std::size_t epochs_for_steps(std::size_t stream_len, const BatchPlan& plan,
                             std::size_t steps) {
  const std::size_t per = batches_per_epoch(stream_len, plan);
  if (per == 0) throw InputError("stream too short for a single batch");
  return std::max<std::size_t>(1, (steps + per - 1) / per);
}

std::vector<Batch> make_batches(const TokenStream& stream, const BatchPlan& plan) {
  if (plan.batch_size == 0 || plan.seq_len == 0) {
    throw InputError("batch_size and seq_len must be positive");
  }
  if (plan.epochs == 0) throw InputError("epochs must be at least 1");
  const std::size_t B = plan.batch_size, T = plan.seq_len;
  if (stream.size() < B * (T + 1)) {
    throw InputError("stream too short: " + std::to_string(stream.size()) +
                     " tokens, need at least B*(T+1) = " +
                     std::to_string(B * (T + 1)));
  }
  const std::size_t windows = windows_per_epoch(stream.size(), T);
  const std::size_t per_epoch = windows / B;

  std::vector<Batch> out;
  out.reserve(per_epoch * plan.epochs);
  std::vector<std::size_t> order(windows);
  for (std::size_t e = 0; e < plan.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (plan.shuffle) {
      std::seed_seq seq{static_cast<std::uint32_t>(plan.shuffle_seed),
                        static_cast<std::uint32_t>(plan.shuffle_seed >> 32),
                        static_cast<std::uint32_t>(e)};
      std::mt19937_64 rng(seq);
      // Explicit Fisher-Yates: std::shuffle's draw pattern is not specified.
      for (std::size_t i = windows; i > 1; --i) {
        std::swap(order[i - 1], order[rng() % i]);
      }
    }
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<std::int32_t> x(B * T), y(B * T);
      for (std::size_t r = 0; r < B; ++r) {
        const std::size_t start = order[b * B + r] * T;
        std::copy_n(stream.ids.begin() + start, T, x.begin() + r * T);
        std::copy_n(stream.ids.begin() + start + 1, T, y.begin() + r * T);
      }
      out.push_back({TokenBatch(B, T, std::move(x)), TokenBatch(B, T, std::move(y))});
    }
  }
  return out;
}

}  // namespace parscale
