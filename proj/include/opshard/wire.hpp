#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opshard/core.hpp"

// Big-endian fixed-width integer framing shared by the stats protocol,
// bucket files and reduce output files.
namespace opshard::wire {

using Bytes = std::vector<std::uint8_t>;

template <typename UInt>
void put_be(Bytes& out, UInt v) {
  for (int shift = (sizeof(UInt) - 1) * 8; shift >= 0; shift -= 8)
    out.push_back(static_cast<std::uint8_t>(v >> shift));
}

inline void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }
inline void put_u32(Bytes& out, std::uint32_t v) { put_be(out, v); }
inline void put_i32(Bytes& out, std::int32_t v) { put_be(out, static_cast<std::uint32_t>(v)); }
inline void put_u64(Bytes& out, std::uint64_t v) { put_be(out, v); }

inline void put_bytes(Bytes& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

/// Sequential big-endian reader over a byte span; throws Protocol on truncation.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return take<std::uint8_t>(); }
  std::uint32_t u32() { return take<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(take<std::uint32_t>()); }
  std::uint64_t u64() { return take<std::uint64_t>(); }

  std::string str(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t k) const {
    if (data_.size() - pos_ < k) throw Error(ErrorKind::Protocol, "truncated frame");
  }

  template <typename UInt>
  UInt take() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v = static_cast<UInt>((v << 8) | data_[pos_ + i]);
    pos_ += sizeof(UInt);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace opshard::wire
