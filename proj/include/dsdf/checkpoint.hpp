#pragma once

// Binary checkpoint layout (all integers little-endian u32):
//   "DSDF" | version | count | count x entry
//   entry: name_len | name (UTF-8) | rank | extents[rank] | f32 payload
// Payload values are IEEE-754 binary32, little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dsdf/error.hpp"
#include "dsdf/params.hpp"
#include "dsdf/tensor.hpp"

namespace dsdf {

inline constexpr std::array<char, 4> kCheckpointMagic{'D', 'S', 'D', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xFFu));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated: " + path_);
  }
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serializes tensors in the given order. Values are stored as f32.
template <typename T>
std::string encode_checkpoint(const std::vector<NamedTensor<T>>& tensors) {
  std::string buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(buf, kCheckpointVersion);
  detail::put_u32(buf, std::uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(buf, std::uint32_t(name.size()));
    buf += name;
    detail::put_u32(buf, std::uint32_t(t.rank()));
    for (auto e : t.shape()) detail::put_u32(buf, std::uint32_t(e));
    for (T v : t.data()) detail::put_u32(buf, std::bit_cast<std::uint32_t>(float(v)));
  }
  return buf;
}

inline std::vector<NamedTensor<float>> decode_checkpoint(const std::string& bytes,
                                                         const std::string& path = "<memory>") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) {
    throw CheckpointError("bad checkpoint magic in " + path);
  }
  detail::ByteReader in(bytes, path);
  in.str(4);
  if (auto v = in.u32(); v != kCheckpointVersion) {
    throw CheckpointError(detail::concat("unsupported checkpoint version ", v, " in ", path));
  }
  const std::uint32_t count = in.u32();
  std::vector<NamedTensor<float>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& e : shape) e = in.u32();
    std::vector<float> values(shape_size(shape));
    for (auto& v : values) v = std::bit_cast<float>(in.u32());
    try {
      out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(values))});
    } catch (const DimensionError& e) {
      throw CheckpointError("malformed tensor in " + path + ": " + e.what());
    }
  }
  if (!in.done()) throw CheckpointError("trailing bytes in checkpoint " + path);
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<NamedTensor<T>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path);
  const std::string bytes = encode_checkpoint(tensors);
  os.write(bytes.data(), std::streamsize(bytes.size()));
  if (!os) throw CheckpointError("short write to checkpoint " + path);
}

inline std::vector<NamedTensor<float>> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

/// Copies checkpoint values into a parameter store. Every name must exist in
/// the store (in any order) with an identical shape.
template <typename T>
void load_into(ParamStore<T>& store, const std::vector<NamedTensor<float>>& saved) {
  if (saved.size() != store.entries().size()) {
    throw CheckpointError(detail::concat("checkpoint holds ", saved.size(), " tensors, model expects ",
                                         store.entries().size()));
  }
  for (const auto& [name, src] : saved) {
    Tensor<T> dst;
    try {
      dst = store.get(name);
    } catch (const ContractError&) {
      throw CheckpointError("checkpoint tensor '" + name + "' is not a model parameter");
    }
    if (dst.shape() != src.shape()) {
      throw CheckpointError(detail::concat("tensor '", name, "' has shape ", shape_str(src.shape()),
                                           " in checkpoint but ", shape_str(dst.shape()), " in model"));
    }
    auto out = dst.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(src[i]);
  }
}

}  // namespace dsdf
