#include "parscale/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "parscale/common/atomic_file.hpp"
#include "parscale/common/errors.hpp"
#include "parscale/common/kv_config.hpp"

namespace parscale {
namespace {

constexpr char kMagic[4] = {'P', 'S', 'C', 'K'};

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const std::string& in, std::size_t pos) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return value;
}

std::string join_shape(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty()) {
      throw CheckpointError("corrupt checkpoint: bad shape '" + text + "'");
    }
    shape.push_back(static_cast<std::size_t>(v));
  }
  return shape;
}

}  // namespace

void save_checkpoint(const ParameterStore<float>& store, const ModelConfig& config,
                     const std::filesystem::path& path) {
  check_store_matches(store, config);
  KeyValueConfig kv;
  config.write(kv);
  std::string header = kv.to_string();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : store) {
    header += "tensor " + name + " " + join_shape(t.shape) + " " + std::to_string(offset) + "\n";
    offset += t.size() * sizeof(float);
  }

  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, header.size());
  out += header;
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : store) {
    for (float v : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  write_file_atomic(path, out);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("corrupt checkpoint: missing PSCK magic" + where);
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " +
                                 std::to_string(version) + " (this build reads " +
                                 std::to_string(kCheckpointVersion) + ")" + where);
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) {
    throw CheckpointError("corrupt checkpoint: header extends past end of file" + where);
  }
  const std::string header = bytes.substr(16, header_len);
  const std::size_t data_start = 16 + header_len;

  std::string config_text;
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  std::stringstream lines(header);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("tensor ", 0) == 0) {
      std::stringstream ls(line.substr(7));
      Entry e;
      std::string shape;
      if (!(ls >> e.name >> shape >> e.offset)) {
        throw CheckpointError("corrupt checkpoint: bad tensor entry '" + line + "'" + where);
      }
      e.shape = parse_shape(shape);
      entries.push_back(std::move(e));
    } else {
      config_text += line + "\n";
    }
  }

  ModelConfig config;
  try {
    config = ModelConfig::read(KeyValueConfig::parse(config_text, path.string()));
    config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }

  LoadedCheckpoint out{{}, config};
  std::uint64_t expected = 0;
  for (const auto& e : entries) {
    if (e.offset != expected) {
      throw CheckpointError("corrupt checkpoint: tensor " + e.name + " offset mismatch" + where);
    }
    const std::size_t n = shape_size(e.shape);
    if (n > bytes.size() || data_start + e.offset + n * sizeof(float) > bytes.size()) {
      throw CheckpointError("corrupt checkpoint: truncated data for tensor " + e.name + where);
    }
    if (out.store.contains(e.name)) {
      throw CheckpointError("corrupt checkpoint: duplicate tensor " + e.name + where);
    }
    Tensor<float> t(e.shape);
    const std::size_t base = data_start + e.offset;
    for (std::size_t i = 0; i < n; ++i) {
      t.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, base + 4 * i));
    }
    out.store.add(e.name, std::move(t));
    expected += n * sizeof(float);
  }
  if (data_start + expected != bytes.size()) {
    throw CheckpointError("corrupt checkpoint: " +
                          std::to_string(bytes.size() - data_start - expected) +
                          " trailing bytes" + where);
  }
  try {
    check_store_matches(out.store, config);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint shape mismatch: ") + e.what());
  }
  return out;
}

}  // namespace parscale
