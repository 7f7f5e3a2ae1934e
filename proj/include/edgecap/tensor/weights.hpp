#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "edgecap/tensor/tensor.hpp"

namespace edgecap {

// Named parameter tensors in deterministic (lexicographic) order.
template <Real T>
class WeightStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& set(const std::string& name, Tensor<T> value);
  void erase(const std::string& name) { entries_.erase(name); }

  Map& entries() { return entries_; }
  const Map& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_params() const;

  void set_requires_grad(bool on);
  void zero_grad();

  template <Real U>
  WeightStore<U> cast() const {
    WeightStore<U> out;
    for (const auto& [name, t] : entries_) out.set(name, t.template cast<U>());
    return out;
  }

  friend bool operator==(const WeightStore& a, const WeightStore& b) { return a.entries_ == b.entries_; }

 private:
  Map entries_;
};

// Flat little-endian format, one entry after another until end of file:
//   u64 name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64),
//   u64 rank, rank x u64 dims, row-major payload.
template <Real T>
void write_weights(std::ostream& os, const WeightStore<T>& store);
template <Real T>
void save_weights(const std::filesystem::path& path, const WeightStore<T>& store);
// Entries stored with the other dtype are converted on load.
template <Real T>
WeightStore<T> read_weights(std::istream& is);
template <Real T>
WeightStore<T> load_weights(const std::filesystem::path& path);

extern template class WeightStore<float>;
extern template class WeightStore<double>;

}  // namespace edgecap
