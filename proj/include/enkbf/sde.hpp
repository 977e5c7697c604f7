#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>

#include <Eigen/Dense>

#include "enkbf/rng.hpp"

// Forward models and synthetic data.
//
// Signal:        dX = f(X, a) dt + G dW,        Q = G G^T
// Observations:  dY = H dX + R^{1/2} dV,        C = H Q H^T + R
//
// Data is consumed as increments dY over a regular grid; the engine simulates
// paths with Euler-Maruyama and turns stored states into noisy increments.

namespace enkbf {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace detail {
inline MatrixXd symmetrized(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }
}  // namespace detail

// Symmetric PSD square root. Diagonal matrices take the elementwise root;
// otherwise a symmetric eigendecomposition with negative eigenvalues clipped
// at zero (round-off guard; inputs are covariance matrices).
inline MatrixXd psd_sqrt(const MatrixXd& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("psd_sqrt: matrix must be square");
  if (m.isDiagonal(0.0)) {
    MatrixXd r = MatrixXd::Zero(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double d = m(i, i);
      if (d < 0.0) throw std::invalid_argument("psd_sqrt: negative diagonal entry");
      r(i, i) = std::sqrt(d);
    }
    return r;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw std::invalid_argument("psd_sqrt: eigensolver failed");
  VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lambda.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

// All matrices the correlated-error algebra needs, derived once from (G, H, R).
struct NoiseGeometry {
  MatrixXd G;       // nx x nw
  MatrixXd Q;       // G G^T
  MatrixXd H;       // ny x nx
  MatrixXd R;       // ny x ny
  MatrixXd C;       // H Q H^T + R, must be positive definite
  MatrixXd sqrt_R;  // symmetric PSD root of R
  int nx = 0;
  int nw = 0;
  int ny = 0;

  static NoiseGeometry make(const MatrixXd& G, const MatrixXd& H, const MatrixXd& R) {
    NoiseGeometry n;
    n.G = G;
    n.H = H;
    n.R = R;
    n.nx = static_cast<int>(G.rows());
    n.nw = static_cast<int>(G.cols());
    n.ny = static_cast<int>(H.rows());
    if (H.cols() != G.rows())
      throw std::invalid_argument("NoiseGeometry: H columns must match state dimension");
    if (R.rows() != n.ny || R.cols() != n.ny)
      throw std::invalid_argument("NoiseGeometry: R must be ny x ny");
    if (!R.isApprox(R.transpose(), 1e-12))
      throw std::invalid_argument("NoiseGeometry: R must be symmetric");
    n.Q = G * G.transpose();
    n.C = H * n.Q * H.transpose() + R;
    Eigen::LLT<MatrixXd> llt(n.C);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("NoiseGeometry: C = H Q H^T + R is not positive definite");
    n.sqrt_R = psd_sqrt(R);
    return n;
  }

  // Scalar convenience: G = sqrt(q), H = 1, R = r.
  static NoiseGeometry scalar(double q, double r) {
    if (q < 0.0 || r < 0.0) throw std::invalid_argument("NoiseGeometry: q, r must be >= 0");
    MatrixXd G(1, 1), H(1, 1), R(1, 1);
    G << std::sqrt(q);
    H << 1.0;
    R << r;
    return make(G, H, R);
  }
};

// Drift evaluation f(x, a). Models that are linear in the parameters can
// expose that structure as f(x, a) = f0(x) + B(x) a; the filters only require
// eval. eval_batch evaluates a whole ensemble (rows = particles) at once and
// exists purely so hot loops avoid per-particle dispatch.
struct DriftModel {
  int state_dim = 1;
  int param_dim = 0;
  std::function<VectorXd(const VectorXd&, const VectorXd&)> eval;
  std::function<MatrixXd(const MatrixXd&, const MatrixXd&)> eval_batch;
  std::function<VectorXd(const VectorXd&)> f0;
  std::function<MatrixXd(const VectorXd&)> basis;

  bool has_linear_structure() const { return static_cast<bool>(f0) && static_cast<bool>(basis); }
};

// Evaluate f for every ensemble row. states: M x nx, params: M x na.
inline MatrixXd eval_drift_all(const DriftModel& model, const MatrixXd& states,
                               const MatrixXd& params) {
  if (model.eval_batch) return model.eval_batch(states, params);
  const Eigen::Index m = std::max(states.rows(), params.rows());
  MatrixXd out(m, model.state_dim);
  for (Eigen::Index i = 0; i < m; ++i)
    out.row(i) = model.eval(states.row(i).transpose(), params.row(i).transpose()).transpose();
  return out;
}

struct SimulatedPath {
  double dt = 0.0;
  VectorXd times;       // n+1
  MatrixXd states;      // (n+1) x nx
  MatrixXd increments;  // n x ny (may be 0 x ny before synthesis)
};

// One explicit step x + dt f(x,a) + G xi, xi ~ N(0, dt I). The standardized
// noise theta is taken as an argument so tests can drive the scheme exactly.
inline VectorXd euler_maruyama_step(const DriftModel& model, const NoiseGeometry& noise,
                                    const VectorXd& x, const VectorXd& a, double dt,
                                    const VectorXd& theta_std) {
  if (!(dt > 0.0)) throw std::invalid_argument("euler_maruyama_step: dt must be positive");
  if (x.size() != model.state_dim || x.size() != noise.nx)
    throw std::invalid_argument("euler_maruyama_step: state dimension mismatch");
  if (a.size() != model.param_dim)
    throw std::invalid_argument("euler_maruyama_step: parameter dimension mismatch");
  if (theta_std.size() != noise.nw)
    throw std::invalid_argument("euler_maruyama_step: noise dimension mismatch");
  return x + dt * model.eval(x, a) + noise.G * (std::sqrt(dt) * theta_std);
}

inline VectorXd euler_maruyama_step(const DriftModel& model, const NoiseGeometry& noise,
                                    const VectorXd& x, const VectorXd& a, double dt,
                                    RngStream& stream) {
  VectorXd theta(noise.nw);
  stream.fill_normal(theta);
  return euler_maruyama_step(model, noise, x, a, dt, theta);
}

// Forward path over n_steps steps; row k holds the state at t = k dt.
inline SimulatedPath simulate_path(const DriftModel& model, const NoiseGeometry& noise,
                                   const VectorXd& x0, const VectorXd& a, double dt, int n_steps,
                                   RngStream& stream) {
  if (n_steps < 0) throw std::invalid_argument("simulate_path: n_steps must be >= 0");
  SimulatedPath path;
  path.dt = dt;
  path.times = VectorXd::LinSpaced(n_steps + 1, 0.0, dt * n_steps);
  path.states.resize(n_steps + 1, model.state_dim);
  path.states.row(0) = x0.transpose();
  VectorXd x = x0;
  for (int k = 0; k < n_steps; ++k) {
    x = euler_maruyama_step(model, noise, x, a, dt, stream);
    path.states.row(k + 1) = x.transpose();
  }
  path.increments.resize(0, noise.ny);
  return path;
}

// dY_n = H (X_{n+1} - X_n) + dt^{1/2} R^{1/2} Xi_n, Xi_n ~ N(0, I).
inline MatrixXd synthesize_increments(const MatrixXd& states, const NoiseGeometry& noise,
                                      double dt, RngStream& stream) {
  if (states.rows() < 2)
    throw std::invalid_argument("synthesize_increments: need at least two states");
  if (!(dt > 0.0)) throw std::invalid_argument("synthesize_increments: dt must be positive");
  if (states.cols() != noise.nx)
    throw std::invalid_argument("synthesize_increments: state dimension mismatch");
  const Eigen::Index n = states.rows() - 1;
  const double root_dt = std::sqrt(dt);
  const bool noiseless = (noise.R.cwiseAbs().maxCoeff() == 0.0);
  MatrixXd dy(n, noise.ny);
  VectorXd xi(noise.ny);
  for (Eigen::Index k = 0; k < n; ++k) {
    dy.row(k) = (noise.H * (states.row(k + 1) - states.row(k)).transpose()).transpose();
    if (!noiseless) {
      stream.fill_normal(xi);
      dy.row(k) += (root_dt * (noise.sqrt_R * xi)).transpose();
    }
  }
  return dy;
}

// Keep every factor-th state; coarse increments are the telescoped sums of the
// fine increments, so the cumulative observed signal is preserved.
inline SimulatedPath subsample(const SimulatedPath& path, int factor) {
  if (factor < 1) throw std::invalid_argument("subsample: factor must be >= 1");
  const Eigen::Index n_fine = path.states.rows() - 1;
  if (n_fine < 0) throw std::invalid_argument("subsample: empty path");
  if (n_fine % factor != 0)
    throw std::invalid_argument("subsample: factor must divide the number of increments");
  if (factor == 1) return path;
  const Eigen::Index n_coarse = n_fine / factor;
  SimulatedPath out;
  out.dt = path.dt * factor;
  out.times.resize(n_coarse + 1);
  out.states.resize(n_coarse + 1, path.states.cols());
  for (Eigen::Index k = 0; k <= n_coarse; ++k) {
    out.times(k) = path.times(k * factor);
    out.states.row(k) = path.states.row(k * factor);
  }
  if (path.increments.rows() == n_fine) {
    out.increments = MatrixXd::Zero(n_coarse, path.increments.cols());
    for (Eigen::Index k = 0; k < n_coarse; ++k)
      for (int j = 0; j < factor; ++j) out.increments.row(k) += path.increments.row(k * factor + j);
  } else {
    out.increments.resize(0, path.increments.cols());
  }
  return out;
}

}  // namespace enkbf
