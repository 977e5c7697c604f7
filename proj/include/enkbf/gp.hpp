#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "enkbf/rng.hpp"

// Zero-mean Gaussian process prior on a periodic grid, sampled spectrally.
//
// The inverse covariance operator eta * ((-Laplace)^p + kappa I) is diagonal
// in the Fourier basis of the periodic domain, so a draw is assembled from
// independent Gaussian mode coefficients with variance 1/(eta(w_k^{2p}+kappa)),
// w_k = 2 pi k / L. With the real orthonormal basis
//   { 1/sqrt(L), sqrt(2/L) cos(w_k x), sqrt(2/L) sin(w_k x) }
// the pointwise variance at every grid node is
//   (1/L) * sum_{k=-N/2+1}^{N/2} 1/(eta(|w_k|^{2p}+kappa)),
// with the Nyquist mode (even N) entering once through its cosine, which is
// the only part visible on the grid.

namespace enkbf {

struct GpPriorSpec {
  double eta = 1.0;
  double kappa = 1.0;
  int p = 2;
  int n_grid = 0;
  double domain_length = 2.0 * M_PI;

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("GpPriorSpec: eta must be positive");
    if (!(kappa > 0.0)) throw std::invalid_argument("GpPriorSpec: kappa must be positive");
    if (p < 1) throw std::invalid_argument("GpPriorSpec: p must be >= 1");
    if (n_grid < 4) throw std::invalid_argument("GpPriorSpec: n_grid must be >= 4");
    if (!(domain_length > 0.0))
      throw std::invalid_argument("GpPriorSpec: domain_length must be positive");
  }

  double mode_precision(int k) const {
    const double w = 2.0 * M_PI * k / domain_length;
    return eta * (std::pow(w * w, p) + kappa);
  }
};

class GpSampler {
 public:
  explicit GpSampler(const GpPriorSpec& spec) : spec_(spec) {
    spec.validate();
    const int n = spec.n_grid;
    const bool even = (n % 2 == 0);
    n_paired_ = even ? n / 2 - 1 : (n - 1) / 2;
    has_nyquist_ = even;
    const double L = spec.domain_length;

    amp0_ = std::sqrt(1.0 / (spec.mode_precision(0) * L));
    amp_paired_.resize(n_paired_);
    cos_table_.resize(n_paired_, n);
    sin_table_.resize(n_paired_, n);
    for (int k = 1; k <= n_paired_; ++k) {
      amp_paired_(k - 1) = std::sqrt(2.0 / (spec.mode_precision(k) * L));
      for (int j = 0; j < n; ++j) {
        const double phase = 2.0 * M_PI * k * j / n;
        cos_table_(k - 1, j) = std::cos(phase);
        sin_table_(k - 1, j) = std::sin(phase);
      }
    }
    if (has_nyquist_) {
      const int k = n / 2;
      amp_nyquist_ = std::sqrt(1.0 / (spec.mode_precision(k) * L));
      nyquist_table_.resize(n);
      for (int j = 0; j < n; ++j) nyquist_table_(j) = (j % 2 == 0) ? 1.0 : -1.0;  // cos(pi j)
    }
  }

  // One draw; consumes 1 + 2*n_paired (+1 for even grids) normals in fixed order.
  VectorXd sample(RngStream& stream) const {
    const int n = spec_.n_grid;
    VectorXd f = VectorXd::Constant(n, amp0_ * stream.normal());
    for (int k = 0; k < n_paired_; ++k) {
      const double c = amp_paired_(k) * stream.normal();
      const double s = amp_paired_(k) * stream.normal();
      f += c * cos_table_.row(k).transpose() + s * sin_table_.row(k).transpose();
    }
    if (has_nyquist_) f += (amp_nyquist_ * stream.normal()) * nyquist_table_;
    return f;
  }

  // Analytic pointwise variance at the grid nodes.
  double pointwise_variance() const {
    double v = amp0_ * amp0_;
    for (int k = 0; k < n_paired_; ++k) v += amp_paired_(k) * amp_paired_(k);
    if (has_nyquist_) v += amp_nyquist_ * amp_nyquist_;
    return v;
  }

  const GpPriorSpec& spec() const { return spec_; }

 private:
  GpPriorSpec spec_;
  int n_paired_ = 0;
  bool has_nyquist_ = false;
  double amp0_ = 0.0;
  double amp_nyquist_ = 0.0;
  VectorXd amp_paired_;
  MatrixXd cos_table_, sin_table_;
  VectorXd nyquist_table_;
};

inline VectorXd sample_gp_drift(const GpPriorSpec& spec, RngStream& stream) {
  return GpSampler(spec).sample(stream);
}

}  // namespace enkbf
