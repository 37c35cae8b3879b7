#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "parscale/model/transformer.hpp"

namespace parscale {

inline constexpr std::size_t kByteVocab = 256;

struct TokenStream {
  std::vector<std::int32_t> ids;
  std::size_t vocab_size = kByteVocab;
  std::string source;

  std::size_t size() const { return ids.size(); }
};

TokenStream tokenize(std::string_view bytes, std::string source = "memory");
std::string detokenize(std::span<const std::int32_t> ids);
inline std::string detokenize(const TokenStream& s) { return detokenize(s.ids); }

// Raw file bytes, one token per byte. Throws InputError for a missing,
// unreadable or empty file.
TokenStream ingest_corpus(const std::filesystem::path& path);

// Leading (1 - holdout) fraction for training, the rest for validation.
std::pair<TokenStream, TokenStream> split_stream(const TokenStream& stream,
                                                 double holdout);

struct BatchPlan {
  std::size_t batch_size = 8;
  std::size_t seq_len = 64;
  bool shuffle = false;
  std::uint64_t shuffle_seed = 0;
  std::size_t epochs = 1;
};

struct Batch {
  TokenBatch tokens;
  TokenBatch targets;
};

// Window i covers ids[i*T, i*T + T) with targets shifted by one. Windows are
// grouped B at a time; a trailing partial batch is dropped. With shuffle the
// window order of epoch e is a permutation seeded by (shuffle_seed, e).
std::vector<Batch> make_batches(const TokenStream& stream, const BatchPlan& plan);

std::size_t windows_per_epoch(std::size_t stream_len, std::size_t seq_len);
std::size_t batches_per_epoch(std::size_t stream_len, const BatchPlan& plan);

// Smallest epoch count giving at least `steps` batches.
std::size_t epochs_for_steps(std::size_t stream_len, const BatchPlan& plan,
                             std::size_t steps);

}  // namespace parscale
