#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnem {

/// Thrown when a caller violates a documented precondition or a file is malformed.
class contract_error : public std::runtime_error {
 public:
  explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

class format_error : public std::runtime_error {
 public:
  explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
template <typename... Args>
std::string format_msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

#define GNEM_CHECK(cond, ...)                                                   \
  do {                                                                          \
    if (!(cond)) {                                                              \
      throw ::gnem::contract_error(                                             \
          ::gnem::detail::format_msg("contract violation: ", __VA_ARGS__,       \
                                     " [", #cond, "]"));                        \
    }                                                                           \
  } while (0)

// ---------------------------------------------------------------------------
// Deterministic random source.
//
// All sampling goes through explicit algorithms (Box-Muller, Marsaglia-Tsang)
// instead of std::<distribution>, whose output is implementation-defined.
// Two runs with the same seed produce identical streams on any platform.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : s_{splitmix64(seed), splitmix64(seed ^ 0xdeadbeefcafef00dull)} {
    if (s_[0] == 0 && s_[1] == 0) s_[0] = 1;
  }

  /// Derive an independent stream, e.g. one per pipeline stage or epoch.
  Rng fork(uint64_t tag) const {
    return Rng(splitmix64(s_[0] ^ splitmix64(tag)) ^ s_[1]);
  }

  uint64_t next_u64() {
    // xoroshiro128+
    uint64_t a = s_[0], b = s_[1];
    uint64_t r = a + b;
    b ^= a;
    s_[0] = ((a << 55) | (a >> 9)) ^ b ^ (b << 14);
    s_[1] = (b << 36) | (b >> 28);
    return r;
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    GNEM_CHECK(n > 0, "uniform_int needs n > 0");
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller; one spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  /// Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 handled by boosting.
  double gamma(double alpha) {
    GNEM_CHECK(alpha > 0, "gamma needs alpha > 0, got ", alpha);
    if (alpha < 1.0) {
      double u = uniform();
      while (u <= 1e-300) u = uniform();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 1e-300 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<size_t> permutation(size_t n) {
    std::vector<size_t> p(n);
    std::iota(p.begin(), p.end(), size_t{0});
    for (size_t i = n; i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  struct State {
    uint64_t s0, s1, spare_bits;
    bool has_spare;
  };
  State state() const {
    State st;
    st.s0 = s_[0];
    st.s1 = s_[1];
    std::memcpy(&st.spare_bits, &spare_, sizeof(double));
    st.has_spare = has_spare_;
    return st;
  }
  void restore(const State& st) {
    s_[0] = st.s0;
    s_[1] = st.s1;
    std::memcpy(&spare_, &st.spare_bits, sizeof(double));
    has_spare_ = st.has_spare;
  }

 private:
  uint64_t s_[2];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Content hashing (FNV-1a 64) for run manifests.
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

inline std::string hash_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw format_error("cannot open file for hashing: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    h = fnv1a64(buf, size_t(f.gcount()), h);
  }
  return hash_hex(h);
}

// ---------------------------------------------------------------------------
// Little-endian binary IO. Readers track the byte offset so format errors can
// name the exact position.
// ---------------------------------------------------------------------------

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : f_(path, std::ios::binary) {
    if (!f_) throw format_error("cannot open for writing: " + path);
  }
  void bytes(const void* p, size_t n) { f_.write(static_cast<const char*>(p), std::streamsize(n)); }
  template <typename T>
  void scalar(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&v, sizeof(T));
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  void f32_array(const float* p, size_t n) { bytes(p, n * sizeof(float)); }
  bool good() const { return f_.good(); }
  void close() { f_.close(); }

 private:
  std::ofstream f_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw format_error("cannot open for reading: " + path);
  }
  void bytes(void* p, size_t n) {
    f_.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(f_.gcount()) != n) {
      throw format_error(detail::format_msg("truncated file ", path_, " at byte offset ", off_,
                                            " (wanted ", n, " bytes, got ", f_.gcount(), ")"));
    }
    off_ += n;
  }
  template <typename T>
  T scalar() {
    static_assert(std::is_trivially_copyable_v<T>);
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string str(size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void f32_array(float* p, size_t n) { bytes(p, n * sizeof(float)); }
  size_t offset() const { return off_; }
  bool at_eof() {
    f_.peek();
    return f_.eof();
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream f_;
  size_t off_ = 0;
};

}  // namespace gnem
