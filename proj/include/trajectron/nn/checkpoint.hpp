#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "trajectron/core.hpp"
#include "trajectron/nn/tape.hpp"

namespace trajectron::nn {

// Named-tensor container.
//
//   "TRJW" | u32 version | u8 endianness (1 = little) | u32 count
//   count x { u32 name_len | name bytes | u32 rank | rank x u64 dim | u8 dtype | raw values }
//
// All integers and values are little-endian.
inline constexpr char kCheckpointMagic[4] = {'T', 'R', 'J', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 1, F64 = 2, U8 = 3 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
  }
  throw Error("unknown dtype");
}

struct TensorRecord {
  std::string name;
  std::vector<std::uint64_t> dims;
  DType dtype = DType::F64;
  std::vector<std::uint8_t> data;  // little-endian values

  std::uint64_t count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  template <typename T>
  static TensorRecord from_matrix(std::string name, const Matrix<T>& m) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    TensorRecord r;
    r.name = std::move(name);
    r.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    r.dtype = std::is_same_v<T, float> ? DType::F32 : DType::F64;
    r.data.resize(m.size() * sizeof(T));
    for (Eigen::Index k = 0; k < m.size(); ++k) store(r.data.data() + k * sizeof(T), m.data()[k]);
    return r;
  }

  static TensorRecord from_bytes(std::string name, const std::string& bytes) {
    TensorRecord r;
    r.name = std::move(name);
    r.dims = {bytes.size()};
    r.dtype = DType::U8;
    r.data.assign(bytes.begin(), bytes.end());
    return r;
  }

  // Values converted to T; rank-1 tensors become a single row.
  template <typename T>
  Matrix<T> to_matrix() const {
    Eigen::Index rows = 1, cols = 1;
    if (dims.size() == 1) cols = static_cast<Eigen::Index>(dims[0]);
    else if (dims.size() == 2) rows = static_cast<Eigen::Index>(dims[0]), cols = static_cast<Eigen::Index>(dims[1]);
    else if (!dims.empty()) throw ShapeError("tensor '" + name + "' has rank > 2");
    Matrix<T> m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      if (dtype == DType::F32) m.data()[k] = static_cast<T>(load<float>(data.data() + k * 4));
      else if (dtype == DType::F64) m.data()[k] = static_cast<T>(load<double>(data.data() + k * 8));
      else m.data()[k] = static_cast<T>(data[k]);
    }
    return m;
  }

  std::string to_string() const { return std::string(data.begin(), data.end()); }

  template <typename V>
  static void store(std::uint8_t* out, V v) {
    std::uint8_t tmp[sizeof(V)];
    std::memcpy(tmp, &v, sizeof(V));
    if constexpr (std::endian::native == std::endian::big) std::reverse(tmp, tmp + sizeof(V));
    std::memcpy(out, tmp, sizeof(V));
  }
  template <typename V>
  static V load(const std::uint8_t* in) {
    std::uint8_t tmp[sizeof(V)];
    std::memcpy(tmp, in, sizeof(V));
    if constexpr (std::endian::native == std::endian::big) std::reverse(tmp, tmp + sizeof(V));
    V v;
    std::memcpy(&v, tmp, sizeof(V));
    return v;
  }

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<TensorRecord>& records) {
  std::vector<std::uint8_t> out;
  auto put = [&out](auto v) {
    std::uint8_t buf[sizeof(v)];
    TensorRecord::store(buf, v);
    out.insert(out.end(), buf, buf + sizeof(v));
  };
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  put(kCheckpointVersion);
  out.push_back(1);
  put(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.data.size() != r.count() * dtype_size(r.dtype)) throw ShapeError("tensor '" + r.name + "' byte size disagrees with dims");
    put(static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put(static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) put(d);
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    out.insert(out.end(), r.data.begin(), r.data.end());
  }
  return out;
}

inline std::vector<TensorRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  std::size_t at = 0;
  auto need = [&](std::size_t n) {
    if (at + n > bytes.size()) throw DataError("checkpoint truncated");
  };
  auto get = [&]<typename V>(V) {
    need(sizeof(V));
    V v = TensorRecord::load<V>(bytes.data() + at);
    at += sizeof(V);
    return v;
  };
  need(4);
  if (!std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) throw DataError("not a checkpoint (bad magic)");
  at = 4;
  const auto version = get(std::uint32_t{});
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  need(1);
  if (bytes[at++] != 1) throw DataError("checkpoint is not little-endian");
  const auto count = get(std::uint32_t{});
  std::vector<TensorRecord> records;
  for (std::uint32_t k = 0; k < count; ++k) {
    TensorRecord r;
    const auto len = get(std::uint32_t{});
    need(len);
    r.name.assign(bytes.begin() + at, bytes.begin() + at + len);
    at += len;
    const auto rank = get(std::uint32_t{});
    for (std::uint32_t d = 0; d < rank; ++d) r.dims.push_back(get(std::uint64_t{}));
    need(1);
    const auto code = bytes[at++];
    if (code < 1 || code > 3) throw DataError("tensor '" + r.name + "' has unknown dtype code");
    r.dtype = static_cast<DType>(code);
    const auto n = r.count() * dtype_size(r.dtype);
    need(n);
    r.data.assign(bytes.begin() + at, bytes.begin() + at + n);
    at += n;
    records.push_back(std::move(r));
  }
  if (at != bytes.size()) throw DataError("trailing bytes after checkpoint");
  return records;
}

inline void write_checkpoint(const std::filesystem::path& path, const std::vector<TensorRecord>& records) {
  const auto bytes = encode_checkpoint(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<TensorRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace trajectron::nn
