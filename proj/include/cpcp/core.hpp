#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cpcp {

using Vec = std::vector<double>;

/// Dense row-major matrix of 64-bit floats.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;  // rows * cols, row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  Vec row_vec(std::size_t i) const {
    return Vec(data.begin() + i * cols, data.begin() + (i + 1) * cols);
  }
};

/// Standard matrix product. Throws std::invalid_argument on inner-dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Deterministic splittable pseudo-random stream (SplitMix64 core).
///
/// Identical (seed, stream_id) pairs replay bit-identical sequences; distinct
/// stream ids behave as independent streams. A stream is single-owner;
/// concurrent work derives children via child() instead of sharing one stream.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  /// Uniform draw in [0, 1).
  double next_uniform();
  /// Uniform draw in the open interval (0, 1).
  double next_uniform_open();
  /// Standard normal draw (inverse-CDF method).
  double next_normal();
  /// Standard Laplace draw (density exp(-|z|)/2).
  double next_laplace();
  /// Uniform integer in [0, bound).
  std::uint64_t next_below(std::uint64_t bound);

  std::uint64_t origin_seed() const { return origin_seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Independent stream derived from this stream's identity (not its position).
  RngStream child(std::uint64_t key) const;

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  std::uint64_t origin_seed_;
  std::uint64_t stream_id_;
};

inline RngStream seeded_stream(std::uint64_t seed, std::uint64_t stream_id) {
  return RngStream(seed, stream_id);
}

/// Stable 64-bit hash of a string (FNV-1a); used to derive stream ids from tags.
std::uint64_t stable_hash64(const std::string& s);

/// Standard normal CDF, absolute error well below 1e-10.
double normal_cdf(double z);
/// Standard normal density.
double normal_pdf(double z);
/// Standard normal quantile on (0, 1). Returns +/-infinity at the endpoints.
double normal_quantile(double p);

double laplace_cdf(double z);
double laplace_pdf(double z);
double laplace_quantile(double p);

}  // namespace cpcp
