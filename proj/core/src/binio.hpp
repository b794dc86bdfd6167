#pragma once

// Internal little-endian binary I/O helpers shared by the checkpoint and
// dataset containers.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "pvmdnn/errors.hpp"

namespace pvmdnn::binio {

// Byte sink that keeps a running CRC32 (IEEE 802.3 polynomial).
class Crc32 {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint32_t c = state_;
    for (std::size_t i = 0; i < n; ++i) {
      c = table()[(c ^ p[i]) & 0xffu] ^ (c >> 8);
    }
    state_ = c;
  }
  std::uint32_t value() const { return state_ ^ 0xffffffffu; }

 private:
  static const std::uint32_t* table() {
    static const auto t = [] {
      std::vector<std::uint32_t> v(256);
      for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        v[i] = c;
      }
      return v;
    }();
    return t.data();
  }
  std::uint32_t state_ = 0xffffffffu;
};

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    path_ = path;
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    crc_.update(data, n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    le(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits);
  }
  void str(const std::string& s) {
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32_block(std::span<const double> v) {
    buf_.resize(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      buf_[i * 4 + 0] = static_cast<char>(bits & 0xff);
      buf_[i * 4 + 1] = static_cast<char>((bits >> 8) & 0xff);
      buf_[i * 4 + 2] = static_cast<char>((bits >> 16) & 0xff);
      buf_[i * 4 + 3] = static_cast<char>((bits >> 24) & 0xff);
    }
    bytes(buf_.data(), buf_.size());
  }
  std::uint32_t crc() const { return crc_.value(); }
  // Writes the running CRC without feeding it back into itself.
  void trailer_crc() {
    const std::uint32_t c = crc_.value();
    char b[4] = {static_cast<char>(c & 0xff), static_cast<char>((c >> 8) & 0xff),
                 static_cast<char>((c >> 16) & 0xff), static_cast<char>((c >> 24) & 0xff)};
    out_.write(b, 4);
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write to '" + path_ + "' failed");
  }

 private:
  template <typename T>
  void le(T v) {
    char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    bytes(b, sizeof(T));
  }
  std::ofstream out_;
  std::string path_;
  Crc32 crc_;
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    in.seekg(0, std::ios::end);
    data_.resize(static_cast<std::size_t>(in.tellg()));
    in.seekg(0);
    in.read(data_.data(), static_cast<std::streamsize>(data_.size()));
    if (!in) throw IoError("read of '" + path + "' failed");
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t pos() const { return pos_; }

  void bytes(void* out, std::size_t n) {
    if (remaining() < n) throw IoError("'" + path_ + "' is truncated");
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  float f32() {
    const std::uint32_t bits = le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t bits = le<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint16_t n = u16();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void f32_block(std::span<double> out) {
    if (remaining() < out.size() * 4) throw IoError("'" + path_ + "' is truncated");
    const auto* p = reinterpret_cast<const unsigned char*>(data_.data() + pos_);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(p[i * 4]) |
                                 (static_cast<std::uint32_t>(p[i * 4 + 1]) << 8) |
                                 (static_cast<std::uint32_t>(p[i * 4 + 2]) << 16) |
                                 (static_cast<std::uint32_t>(p[i * 4 + 3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      out[i] = static_cast<double>(f);
    }
    pos_ += out.size() * 4;
  }
  // CRC32 of bytes [0, end) of the file image.
  std::uint32_t crc_of_prefix(std::size_t end) const {
    Crc32 c;
    c.update(data_.data(), end);
    return c.value();
  }
  const std::string& path() const { return path_; }

 private:
  template <typename T>
  T le() {
    unsigned char b[sizeof(T)];
    bytes(b, sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
    return v;
  }
  std::string path_;
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace pvmdnn::binio
