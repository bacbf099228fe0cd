#pragma once

// Little-endian byte buffers, independent of host byte order.

#include "affakt/error.hpp"

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

namespace affakt::detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

 private:
  void put(std::uint64_t v, int width) {
    for (int b = 0; b < width; ++b) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }

  std::vector<std::uint8_t> bytes_;
};

/// Every read names the field so a short buffer reports where it ran out.
class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::size_t offset() const noexcept { return at_; }
  bool done() const noexcept { return at_ == bytes_.size(); }

  std::uint8_t u8(const char* field) { return static_cast<std::uint8_t>(get(1, field)); }
  std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(get(4, field)); }
  std::uint64_t u64(const char* field) { return get(8, field); }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }
  std::string raw(std::size_t count, const char* field) {
    require(count, field);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(at_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(at_ + count));
    at_ += count;
    return s;
  }

  [[noreturn]] void fail(const std::string& what, std::size_t offset) const {
    throw FormatError(context_ + ": " + what, offset);
  }

  void require(std::size_t count, const char* field) const {
    if (bytes_.size() - at_ < count) fail(std::string("truncated while reading ") + field, at_);
  }

 private:
  std::uint64_t get(int width, const char* field) {
    require(static_cast<std::size_t>(width), field);
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) v |= static_cast<std::uint64_t>(bytes_[at_ + static_cast<std::size_t>(b)]) << (8 * b);
    at_ += static_cast<std::size_t>(width);
    return v;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string context_;
  std::size_t at_ = 0;
};

}  // namespace affakt::detail
