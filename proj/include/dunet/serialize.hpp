#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dunet/tensor.hpp"

namespace dunet {

// Portable tensor container. Little-endian; header = magic "DUNT",
// version u32, entry count u32; per entry: name len u16 + UTF-8 name,
// dtype code u8 (1=f32, 2=f64, 3=u8, 4=i32), trainable flag u8, ndim u8,
// dims as u32 each, then the raw row-major payload.

enum class DType : uint8_t { f32 = 1, f64 = 2, u8 = 3, i32 = 4 };

inline size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
    case DType::i32: return 4;
  }
  throw std::runtime_error("unknown dtype code");
}

struct ContainerEntry {
  DType dtype = DType::f64;
  bool trainable = false;
  Shape dims;
  std::vector<unsigned char> payload;

  int64_t count() const { return numel(dims); }

  template <typename T>
  static ContainerEntry from(const Shape& dims, const std::vector<T>& v,
                             bool trainable) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double> ||
                  std::is_same_v<T, uint8_t> || std::is_same_v<T, int32_t>);
    ContainerEntry e;
    if constexpr (std::is_same_v<T, float>) e.dtype = DType::f32;
    else if constexpr (std::is_same_v<T, double>) e.dtype = DType::f64;
    else if constexpr (std::is_same_v<T, uint8_t>) e.dtype = DType::u8;
    else e.dtype = DType::i32;
    e.trainable = trainable;
    e.dims = dims;
    e.payload.resize(v.size() * sizeof(T));
    std::memcpy(e.payload.data(), v.data(), e.payload.size());
    return e;
  }

  template <typename T>
  std::vector<T> as() const {
    std::vector<T> out(count());
    if constexpr (std::is_same_v<T, float>) {
      if (dtype == DType::f32)
        std::memcpy(out.data(), payload.data(), payload.size());
      else if (dtype == DType::f64) {
        const double* p = reinterpret_cast<const double*>(payload.data());
        for (int64_t i = 0; i < count(); ++i) out[i] = static_cast<float>(p[i]);
      } else
        throw std::runtime_error("entry dtype not convertible to f32");
    } else if constexpr (std::is_same_v<T, double>) {
      if (dtype == DType::f64)
        std::memcpy(out.data(), payload.data(), payload.size());
      else if (dtype == DType::f32) {
        const float* p = reinterpret_cast<const float*>(payload.data());
        for (int64_t i = 0; i < count(); ++i) out[i] = p[i];
      } else
        throw std::runtime_error("entry dtype not convertible to f64");
    } else {
      if ((std::is_same_v<T, uint8_t> && dtype != DType::u8) ||
          (std::is_same_v<T, int32_t> && dtype != DType::i32))
        throw std::runtime_error("entry dtype mismatch");
      std::memcpy(out.data(), payload.data(), payload.size());
    }
    return out;
  }
};

// Ordered by name so serialization is byte-deterministic.
using Container = std::map<std::string, ContainerEntry>;

namespace detail {

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U take(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw std::runtime_error("container truncated");
  return v;
}

}  // namespace detail

inline void save_container(const Container& c, std::ostream& os) {
  os.write("DUNT", 4);
  detail::put<uint32_t>(os, 1);
  detail::put<uint32_t>(os, static_cast<uint32_t>(c.size()));
  for (const auto& [name, e] : c) {
    detail::put<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), name.size());
    detail::put<uint8_t>(os, static_cast<uint8_t>(e.dtype));
    detail::put<uint8_t>(os, e.trainable ? 1 : 0);
    detail::put<uint8_t>(os, static_cast<uint8_t>(e.dims.size()));
    for (int64_t d : e.dims) detail::put<uint32_t>(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(e.payload.data()),
             e.payload.size());
  }
}

inline void save_container(const Container& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  save_container(c, f);
}

inline Container load_container(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DUNT", 4) != 0)
    throw std::runtime_error("bad container magic");
  uint32_t version = detail::take<uint32_t>(is);
  if (version != 1)
    throw std::runtime_error("unsupported container version " +
                             std::to_string(version));
  uint32_t count = detail::take<uint32_t>(is);
  Container c;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t nlen = detail::take<uint16_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    ContainerEntry e;
    e.dtype = static_cast<DType>(detail::take<uint8_t>(is));
    e.trainable = detail::take<uint8_t>(is) != 0;
    uint8_t ndim = detail::take<uint8_t>(is);
    e.dims.resize(ndim);
    for (auto& d : e.dims) d = detail::take<uint32_t>(is);
    e.payload.resize(numel(e.dims) * dtype_size(e.dtype));
    is.read(reinterpret_cast<char*>(e.payload.data()), e.payload.size());
    if (!is) throw std::runtime_error("container truncated in " + name);
    c.emplace(std::move(name), std::move(e));
  }
  return c;
}

inline Container load_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  return load_container(f);
}

}  // namespace dunet
