#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "parscale/common/errors.hpp"

namespace parscale {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major tensor.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0})
      : shape(std::move(s)), data(shape_size(shape), fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::span<T> span() noexcept { return data; }
  std::span<const T> span() const noexcept { return data; }

  bool operator==(const Tensor&) const = default;
};

// Insertion-ordered map from tensor name to tensor. Order is the
// on-disk directory order of a checkpoint.
template <typename T>
class TensorMap {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> tensor) {
    if (index_.count(name) != 0) {
      throw ContractError("duplicate tensor name: " + name);
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(tensor));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const {
    return index_.count(name) != 0;
  }

  Tensor<T>& at(const std::string& name) {
    return entries_[lookup(name)].second;
  }
  const Tensor<T>& at(const std::string& name) const {
    return entries_[lookup(name)].second;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  // Same names and shapes, zero-filled.
  TensorMap zeros_like() const {
    TensorMap out;
    for (const auto& [name, t] : entries_) out.add(name, Tensor<T>(t.shape));
    return out;
  }

  template <typename U>
  TensorMap<U> cast() const {
    TensorMap<U> out;
    for (const auto& [name, t] : entries_) {
      Tensor<U> u;
      u.shape = t.shape;
      u.data.assign(t.data.begin(), t.data.end());
      out.add(name, std::move(u));
    }
    return out;
  }

  bool operator==(const TensorMap& other) const {
    return entries_ == other.entries_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown tensor: " + name);
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace parscale
