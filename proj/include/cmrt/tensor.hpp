#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmrt/error.hpp"

namespace cmrt {

enum class DType { f32, f64 };

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

inline DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw Error(ErrorKind::format, "unknown dtype '" + s + "'");
}

inline std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array. Values are held in double precision; f32 tensors
/// only ever hold values exactly representable as float, so serialization
/// round-trips bit-for-bit.
struct Tensor {
  DType dtype = DType::f64;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shp, DType dt = DType::f64)
      : dtype(dt), shape(std::move(shp)), data(shape_product(shape), 0.0) {}
  Tensor(std::vector<std::size_t> shp, std::vector<double> values, DType dt = DType::f64)
      : dtype(dt), shape(std::move(shp)), data(std::move(values)) {
    require(data.size() == shape_product(shape), "tensor data length does not match shape",
            ErrorKind::shape);
    if (dtype == DType::f32) round_to_dtype();
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  /// Rounds stored values to the tensor's dtype (no-op for f64).
  void round_to_dtype() {
    if (dtype != DType::f32) return;
    for (double& v : data) v = static_cast<double>(static_cast<float>(v));
  }

  bool same_layout(const Tensor& o) const { return dtype == o.dtype && shape == o.shape; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Names are nonempty '/'-separated paths of [A-Za-z0-9_.-] segments.
inline bool valid_tensor_name(const std::string& name) {
  if (name.empty() || name.front() == '/' || name.back() == '/') return false;
  char prev = 0;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '.' || c == '-' || c == '/';
    if (!ok || (c == '/' && prev == '/')) return false;
    prev = c;
  }
  return true;
}

/// Named collection of tensors, iterated in lexicographic name order.
class TensorMap {
 public:
  using Map = std::map<std::string, Tensor>;

  void set(const std::string& name, Tensor t) {
    require(valid_tensor_name(name), "invalid tensor name '" + name + "'");
    entries_.insert_or_assign(name, std::move(t));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error(ErrorKind::shape, "missing tensor '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error(ErrorKind::shape, "missing tensor '" + name + "'");
    return it->second;
  }

  void erase(const std::string& name) { entries_.erase(name); }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [n, _] : entries_) out.push_back(n);
    return out;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  /// Same names, dtypes and shapes.
  bool congruent(const TensorMap& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    auto a = entries_.begin();
    auto b = o.entries_.begin();
    for (; a != entries_.end(); ++a, ++b) {
      if (a->first != b->first || !a->second.same_layout(b->second)) return false;
    }
    return true;
  }

  /// Zero-filled map with the same layout.
  TensorMap zeros_like() const {
    TensorMap out;
    for (const auto& [n, t] : entries_) out.entries_.emplace(n, Tensor(t.shape, t.dtype));
    return out;
  }

  friend bool operator==(const TensorMap&, const TensorMap&) = default;

 private:
  Map entries_;
};

/// Index of the first non-finite entry, or -1.
inline long first_non_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (!std::isfinite(t.data[i])) return static_cast<long>(i);
  }
  return -1;
}

}  // namespace cmrt
