#include "edgecap/tensor/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace edgecap {

static_assert(std::endian::native == std::endian::little, "weight I/O assumes a little-endian host");

template <Real T>
Tensor<T>& WeightStore<T>::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StoreError("missing weight entry '" + name + "'");
  return it->second;
}

template <Real T>
const Tensor<T>& WeightStore<T>::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StoreError("missing weight entry '" + name + "'");
  return it->second;
}

template <Real T>
Tensor<T>& WeightStore<T>::set(const std::string& name, Tensor<T> value) {
  auto [it, inserted] = entries_.insert_or_assign(name, std::move(value));
  return it->second;
}

template <Real T>
std::size_t WeightStore<T>::total_params() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

template <Real T>
void WeightStore<T>::set_requires_grad(bool on) {
  for (auto& [_, t] : entries_) t.set_requires_grad(on);
}

template <Real T>
void WeightStore<T>::zero_grad() {
  for (auto& [_, t] : entries_) {
    if (t.requires_grad()) t.zero_grad();
  }
}

namespace {

void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

bool get_bytes(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  std::uint64_t v = 0;
  if (!get_bytes(is, &v, sizeof v)) throw ParseError(std::string("truncated weight file while reading ") + what);
  return v;
}

template <Real Stored, Real T>
std::vector<T> read_payload(std::istream& is, std::size_t n) {
  std::vector<Stored> raw(n);
  if (!get_bytes(is, raw.data(), n * sizeof(Stored))) throw ParseError("truncated weight payload");
  return std::vector<T>(raw.begin(), raw.end());
}

}  // namespace

template <Real T>
void write_weights(std::ostream& os, const WeightStore<T>& store) {
  for (const auto& [name, t] : store.entries()) {
    put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto dtype = static_cast<std::uint8_t>(dtype_of<T>());
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    put_u64(os, t.rank());
    for (std::size_t d : t.shape()) put_u64(os, d);
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  }
}

template <Real T>
void save_weights(const std::filesystem::path& path, const WeightStore<T>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  write_weights(os, store);
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

template <Real T>
WeightStore<T> read_weights(std::istream& is) {
  WeightStore<T> store;
  while (true) {
    std::uint64_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof name_len);
    if (is.gcount() == 0 && is.eof()) break;
    if (is.gcount() != sizeof name_len) throw ParseError("truncated weight entry header");
    if (name_len > (1u << 20)) throw ParseError("implausible weight name length");
    std::string name(name_len, '\0');
    if (!get_bytes(is, name.data(), name_len)) throw ParseError("truncated weight name");
    std::uint8_t dtype = 0;
    if (!get_bytes(is, &dtype, 1)) throw ParseError("truncated dtype for '" + name + "'");
    const std::uint64_t rank = get_u64(is, "rank");
    if (rank == 0 || rank > 8) throw ParseError("unsupported rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(is, "dims");
    const std::size_t n = shape_numel(shape);
    std::vector<T> data;
    if (dtype == static_cast<std::uint8_t>(DType::F32)) {
      data = read_payload<float, T>(is, n);
    } else if (dtype == static_cast<std::uint8_t>(DType::F64)) {
      data = read_payload<double, T>(is, n);
    } else {
      throw ParseError("unknown dtype byte " + std::to_string(dtype) + " for '" + name + "'");
    }
    store.set(name, Tensor<T>(std::move(shape), std::move(data)));
  }
  return store;
}

template <Real T>
WeightStore<T> load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weights '" + path.string() + "'");
  return read_weights<T>(is);
}

template class WeightStore<float>;
template class WeightStore<double>;
template void write_weights(std::ostream&, const WeightStore<float>&);
template void write_weights(std::ostream&, const WeightStore<double>&);
template void save_weights(const std::filesystem::path&, const WeightStore<float>&);
template void save_weights(const std::filesystem::path&, const WeightStore<double>&);
template WeightStore<float> read_weights(std::istream&);
template WeightStore<double> read_weights(std::istream&);
template WeightStore<float> load_weights(const std::filesystem::path&);
template WeightStore<double> load_weights(const std::filesystem::path&);

}  // namespace edgecap
