#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mergeforge/error.hpp"

namespace mergeforge {

/// On-disk element type. In memory every tensor is F32; F16 only exists as
/// a read-side encoding.
enum class Dtype { F32, F16 };

constexpr std::string_view to_string(Dtype dtype) noexcept {
  return dtype == Dtype::F32 ? "F32" : "F16";
}

constexpr std::size_t dtype_size(Dtype dtype) noexcept {
  return dtype == Dtype::F32 ? 4 : 2;
}

using Shape = std::vector<std::uint64_t>;

inline std::uint64_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major F32 tensor. `dtype` records the encoding it was read
/// from; the payload is always 32-bit float.
struct Tensor {
  Dtype dtype = Dtype::F32;
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<float> values, Dtype source = Dtype::F32)
      : dtype(source), shape(std::move(s)), data(std::move(values)) {
    if (element_count(shape) != data.size()) {
      fail(ErrorKind::ShapeMismatch, "shape " + shape_string(shape) + " holds " +
                                         std::to_string(element_count(shape)) +
                                         " elements but data has " +
                                         std::to_string(data.size()));
    }
  }

  std::size_t size() const noexcept { return data.size(); }
  std::span<const float> values() const noexcept { return data; }
  std::span<float> values() noexcept { return data; }

  /// Length of the last axis; scalars and empty shapes are one row.
  std::size_t row_length() const noexcept {
    if (shape.empty()) return data.size();
    return static_cast<std::size_t>(shape.back());
  }
};

/// Bitwise equality, so NaN payloads and signed zeros compare exactly.
inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.data.size() == b.data.size() &&
         (a.data.empty() ||
          std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

/// Ordered collection of named tensors. Iteration order is lexicographic
/// by name, which is the canonical order for every downstream operation.
/// `metadata` carries the optional string map stored under the container's
/// `__metadata__` key.
class TensorMap {
 public:
  using Storage = std::map<std::string, Tensor, std::less<>>;

  TensorMap() = default;

  void insert(std::string name, Tensor tensor) {
    if (name.empty()) fail(ErrorKind::MalformedHeader, "tensor names must be non-empty");
    if (name == kMetadataKey) {
      fail(ErrorKind::MalformedHeader, "tensor name '__metadata__' is reserved");
    }
    if (element_count(tensor.shape) != tensor.data.size()) {
      fail(ErrorKind::ShapeMismatch, "tensor '" + name + "' shape " +
                                         shape_string(tensor.shape) +
                                         " disagrees with its data length");
    }
    auto [it, inserted] = entries_.try_emplace(std::move(name), std::move(tensor));
    if (!inserted) fail(ErrorKind::MalformedHeader, "duplicate tensor name '" + it->first + "'");
  }

  const Tensor& at(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      fail(ErrorKind::NameSetMismatch, "no tensor named '" + std::string(name) + "'");
    }
    return it->second;
  }
  Tensor& at(std::string_view name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
  }

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }
  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::uint64_t parameter_count() const {
    std::uint64_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
  const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

  static constexpr std::string_view kMetadataKey = "__metadata__";

 private:
  Storage entries_;
  std::map<std::string, std::string> metadata_;
};

/// Tensor-wise bitwise equality; metadata is compared too.
inline bool bit_equal(const TensorMap& a, const TensorMap& b) {
  if (a.size() != b.size() || a.metadata() != b.metadata()) return false;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bit_equal(ia->second, ib->second)) return false;
  }
  return true;
}

/// Throws NameSetMismatch (listing missing and extra names) or
/// ShapeMismatch unless `other` has exactly the names and shapes of `ref`.
inline void require_same_layout(const TensorMap& ref, const TensorMap& other,
                                std::string_view ref_label, std::string_view other_label) {
  std::vector<std::string> missing, extra;
  for (const auto& [name, _] : ref) {
    if (!other.contains(name)) missing.push_back(name);
  }
  for (const auto& [name, _] : other) {
    if (!ref.contains(name)) extra.push_back(name);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg;
    auto list = [](const std::vector<std::string>& names) {
      std::string s;
      for (std::size_t i = 0; i < names.size(); ++i) s += (i ? ", " : "") + names[i];
      return s;
    };
    if (!missing.empty()) {
      msg += "present in " + std::string(ref_label) + " but not " + std::string(other_label) +
             ": " + list(missing);
    }
    if (!extra.empty()) {
      if (!msg.empty()) msg += "; ";
      msg += "present in " + std::string(other_label) + " but not " + std::string(ref_label) +
             ": " + list(extra);
    }
    fail(ErrorKind::NameSetMismatch, msg);
  }
  for (const auto& [name, t] : ref) {
    const Tensor& o = other.at(name);
    if (o.shape != t.shape) {
      fail(ErrorKind::ShapeMismatch, "tensor '" + name + "' has shape " + shape_string(t.shape) +
                                         " in " + std::string(ref_label) + " but " +
                                         shape_string(o.shape) + " in " +
                                         std::string(other_label));
    }
  }
}

}  // namespace mergeforge
