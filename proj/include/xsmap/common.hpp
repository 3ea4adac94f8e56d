#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace xsmap {

// Error taxonomy mirrored by the CLI exit codes: Config -> 1, Data -> 2,
// Numeric -> 3.
enum class ErrorKind { Config, Data, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::Config, msg) {}
};

// Format, shape, state and degenerate-input failures.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// std::mt19937_64 is bit-identical across implementations but the standard
// distributions are not, so the variate transforms live here.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable per-purpose seed stream: derive_seed(s, 0), derive_seed(s, 1), ...
inline uint64_t derive_seed(uint64_t master, uint64_t counter) {
  return splitmix64(master ^ splitmix64(counter + 1));
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    const uint64_t bound = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<int>(x % bound);
  }

  // Standard normal via Box-Muller; one spare variate cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
    return p;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Little-endian binary file helpers for the trial/feature/checkpoint formats.
// Errors name the offending field.
// ---------------------------------------------------------------------------

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path)
      : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot open '" + path + "' for writing");
  }

  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void magic(const char tag[4]) { raw(tag, 4); }

  void f64_array(const double* data, size_t count) { raw(data, count * 8); }
  void f32_array(const float* data, size_t count) { raw(data, count * 4); }

  void close() {
    out_.close();
    if (!out_) throw DataError("write to '" + path_ + "' failed");
  }

 private:
  void raw(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw DataError("write to '" + path_ + "' failed");
  }

  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open '" + path + "' for reading");
  }

  uint8_t u8(const char* field) { uint8_t v; raw(&v, 1, field); return v; }
  uint32_t u32(const char* field) { uint32_t v; raw(&v, 4, field); return v; }
  uint64_t u64(const char* field) { uint64_t v; raw(&v, 8, field); return v; }
  float f32(const char* field) { float v; raw(&v, 4, field); return v; }
  double f64(const char* field) { double v; raw(&v, 8, field); return v; }

  void expect_magic(const char tag[4], const char* what) {
    char got[4];
    raw(got, 4, "magic");
    if (std::memcmp(got, tag, 4) != 0)
      throw DataError(std::string("bad magic in '") + path_ + "': not a " + what + " file");
  }

  void f64_array(double* data, size_t count, const char* field) { raw(data, count * 8, field); }
  void f32_array(float* data, size_t count, const char* field) { raw(data, count * 4, field); }

  // True when the whole payload has been consumed.
  bool at_eof() { in_.peek(); return in_.eof(); }

 private:
  void raw(void* p, size_t n, const char* field) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n)
      throw DataError("truncated '" + path_ + "': expected field '" + field + "'");
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace xsmap
