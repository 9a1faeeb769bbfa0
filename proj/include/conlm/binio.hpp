// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary file helpers with hard EOF checks.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "conlm/common.hpp"

namespace conlm {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed on '" + path_ + "'");
  }

  template <class T>
  void pod(T v) {
    bytes(&v, sizeof(T));
  }

  void u16(std::uint16_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f32(float v) { pod(v); }
  void f64(double v) { pod(v); }

  void magic(const char (&m)[5]) { bytes(m, 4); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("close failed on '" + path_ + "'");
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open '" + path + "' for reading");
  }

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw IoError("unexpected end of file in '" + path_ + "'");
  }

  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }

  std::uint16_t u16() { return pod<std::uint16_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  float f32() { return pod<float>(); }
  double f64() { return pod<double>(); }

  void expect_magic(const char (&m)[5], const std::string& what) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0)
      throw IoError("'" + path_ + "' is not a " + what + " file (bad magic)");
  }

  std::string str(std::size_t max_len = 1 << 20) {
    std::uint32_t n = u32();
    if (n > max_len) throw IoError("string length " + std::to_string(n) + " too large in '" + path_ + "'");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  void expect_eof() {
    char c;
    in_.read(&c, 1);
    if (!in_.eof()) throw IoError("trailing bytes in '" + path_ + "'");
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace conlm
