#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include <Eigen/Dense>

// Counter-based random number generation (Philox 4x32-10).
//
// A stream is addressed by (seed, stream_id): the seed forms the cipher key,
// the stream id occupies the upper counter words and the draw index the lower
// ones. Streams with distinct ids therefore produce disjoint counter blocks
// and are independent by construction; no jump-ahead bookkeeping is needed.
// Handing one stream per particle (or per noise source) keeps realized noise
// independent of ensemble size and of any execution order.

namespace enkbf {

namespace detail {

inline constexpr std::uint32_t lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
inline constexpr std::uint32_t hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

// One 128-bit Philox 4x32-10 block for key (k0,k1) and counter (c0..c3).
inline std::array<std::uint32_t, 4> philox4x32(std::uint64_t key, std::uint64_t ctr_hi,
                                               std::uint64_t ctr_lo) {
  constexpr std::uint32_t mul_a = 0xD2511F53u;
  constexpr std::uint32_t mul_b = 0xCD9E8D57u;
  constexpr std::uint32_t weyl_a = 0x9E3779B9u;
  constexpr std::uint32_t weyl_b = 0xBB67AE85u;

  std::uint32_t c0 = lo32(ctr_lo), c1 = hi32(ctr_lo);
  std::uint32_t c2 = lo32(ctr_hi), c3 = hi32(ctr_hi);
  std::uint32_t k0 = lo32(key), k1 = hi32(key);

  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(mul_a) * c0;
    const std::uint64_t p1 = static_cast<std::uint64_t>(mul_b) * c2;
    const std::uint32_t n0 = hi32(p1) ^ c1 ^ k0;
    const std::uint32_t n1 = lo32(p1);
    const std::uint32_t n2 = hi32(p0) ^ c3 ^ k1;
    const std::uint32_t n3 = lo32(p0);
    c0 = n0;
    c1 = n1;
    c2 = n2;
    c3 = n3;
    k0 += weyl_a;
    k1 += weyl_b;
  }
  return {c0, c1, c2, c3};
}

}  // namespace detail

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : key_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const { return key_; }
  std::uint64_t stream_id() const { return stream_id_; }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; pairs are cached so consumption stays
  // deterministic regardless of request granularity.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  template <typename Derived>
  void fill_normal(Eigen::MatrixBase<Derived> const& out_) {
    auto& out = const_cast<Eigen::MatrixBase<Derived>&>(out_);
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = normal();
  }

 private:
  std::uint64_t next_u64() {
    if (buf_pos_ >= 4) {
      buf_ = detail::philox4x32(key_, stream_id_, counter_++);
      buf_pos_ = 0;
    }
    const std::uint64_t lo = buf_[buf_pos_];
    const std::uint64_t hi = buf_[buf_pos_ + 1];
    buf_pos_ += 2;
    return (hi << 32) | lo;
  }

  std::uint64_t key_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int buf_pos_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Vector of independent N(0, dt) samples.
inline Eigen::VectorXd gaussian_increments(RngStream& stream, int dim, double dt) {
  if (dim < 1) throw std::invalid_argument("gaussian_increments: dim must be >= 1");
  if (!(dt > 0.0)) throw std::invalid_argument("gaussian_increments: dt must be positive");
  const double scale = std::sqrt(dt);
  Eigen::VectorXd out(dim);
  for (int i = 0; i < dim; ++i) out(i) = scale * stream.normal();
  return out;
}

}  // namespace enkbf
