#pragma once

#include <cmath>
#include <iostream>
#include <stdexcept>

#include <Eigen/Dense>

#include "enkbf/sde.hpp"

// Concrete experiment models: scalar Ornstein-Uhlenbeck, the averaging and
// homogenization multiscale systems, a nonparametric periodic drift field on
// hat functions, and the finite-volume stochastic heat equation.

namespace enkbf {

// f(x, a) = a x with a free (param_dim = 1).
inline DriftModel ou_model() {
  DriftModel m;
  m.state_dim = 1;
  m.param_dim = 1;
  m.eval = [](const VectorXd& x, const VectorXd& a) -> VectorXd { return a(0) * x; };
  m.eval_batch = [](const MatrixXd& states, const MatrixXd& params) -> MatrixXd {
    return states.cwiseProduct(params);
  };
  m.f0 = [](const VectorXd& x) -> VectorXd { return VectorXd::Zero(x.size()); };
  m.basis = [](const VectorXd& x) -> MatrixXd { return x; };
  return m;
}

// f(x) = a x with a fixed (param_dim = 0).
inline DriftModel ou_model(double a) {
  DriftModel m;
  m.state_dim = 1;
  m.param_dim = 0;
  m.eval = [a](const VectorXd& x, const VectorXd&) -> VectorXd { return a * x; };
  m.eval_batch = [a](const MatrixXd& states, const MatrixXd&) -> MatrixXd { return a * states; };
  return m;
}

// General fixed linear drift f(x) = F x (param_dim = 0).
inline DriftModel linear_model(const MatrixXd& F) {
  if (F.rows() != F.cols()) throw std::invalid_argument("linear_model: F must be square");
  DriftModel m;
  m.state_dim = static_cast<int>(F.rows());
  m.param_dim = 0;
  m.eval = [F](const VectorXd& x, const VectorXd&) -> VectorXd { return F * x; };
  m.eval_batch = [F](const MatrixXd& states, const MatrixXd&) -> MatrixXd {
    return states * F.transpose();
  };
  return m;
}

// ---------------------------------------------------------------------------
// Multiscale systems

struct MultiscaleSpec {
  enum class Kind { Averaging, Homogenization };
  Kind kind = Kind::Averaging;
  double epsilon = 0.1;
  // Averaging: dY = (1 - Z^2) Y dt + sqrt(q) dW_y, dZ = -(alpha/eps) Z dt + sqrt(2 lambda/eps) dW_z.
  double lambda = 3.0;
  double alpha = 2.0;
  double q = 0.5;
  // Homogenization: dY = (sqrt(sigma/2)/eps Z + a Y) dt, dZ = -Z/eps^2 dt + (sqrt(2)/eps) dW_z.
  double a = -0.5;
  double sigma = 0.5;

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("MultiscaleSpec: epsilon must be positive");
    if (kind == Kind::Averaging) {
      if (!(lambda > 0.0) || !(alpha > 0.0) || !(q >= 0.0))
        throw std::invalid_argument("MultiscaleSpec: lambda, alpha must be positive, q >= 0");
      if (!(lambda / alpha > 1.0))
        throw std::invalid_argument(
            "MultiscaleSpec: averaging requires lambda/alpha > 1 for a stable reduced model");
    } else {
      if (!(sigma >= 0.0)) throw std::invalid_argument("MultiscaleSpec: sigma must be >= 0");
    }
  }
};

// Reduced drift parameter of the averaging system.
inline double averaging_reduced_a(const MultiscaleSpec& spec) {
  return 1.0 - spec.lambda / spec.alpha;
}

namespace detail {
inline void warn_fast_scale(double rate_dt, const char* which) {
  if (rate_dt > 0.5)
    std::cerr << "warning: " << which << ": fast-variable step dt*rate = " << rate_dt
              << " > 0.5; the fast scale is under-resolved\n";
}
}  // namespace detail

// Both slow and fast components, rows = time; column 0 is Y, column 1 is Z.
inline MatrixXd simulate_averaging_full(const MultiscaleSpec& spec, double dt, double t_final,
                                        RngStream& stream) {
  spec.validate();
  if (spec.kind != MultiscaleSpec::Kind::Averaging)
    throw std::invalid_argument("simulate_averaging: spec kind mismatch");
  if (!(dt > 0.0) || !(t_final >= 0.0))
    throw std::invalid_argument("simulate_averaging: dt must be positive, t_final >= 0");
  detail::warn_fast_scale(dt * spec.alpha / spec.epsilon, "simulate_averaging");
  const int n = static_cast<int>(std::llround(t_final / dt));
  const double root_q_dt = std::sqrt(spec.q * dt);
  const double root_fast = std::sqrt(2.0 * spec.lambda / spec.epsilon * dt);
  MatrixXd yz(n + 1, 2);
  double y = 0.5, z = 0.0;
  yz(0, 0) = y;
  yz(0, 1) = z;
  for (int k = 0; k < n; ++k) {
    const double y_next = y + (1.0 - z * z) * y * dt + root_q_dt * stream.normal();
    const double z_next = z - (spec.alpha / spec.epsilon) * z * dt + root_fast * stream.normal();
    y = y_next;
    z = z_next;
    yz(k + 1, 0) = y;
    yz(k + 1, 1) = z;
  }
  return yz;
}

inline SimulatedPath simulate_averaging(const MultiscaleSpec& spec, double dt, double t_final,
                                        RngStream& stream) {
  const MatrixXd yz = simulate_averaging_full(spec, dt, t_final, stream);
  SimulatedPath path;
  path.dt = dt;
  path.times = VectorXd::LinSpaced(yz.rows(), 0.0, dt * (yz.rows() - 1));
  path.states = yz.col(0);
  path.increments.resize(0, 1);
  return path;
}

inline MatrixXd simulate_homogenization_full(const MultiscaleSpec& spec, double dtau,
                                             double t_final, RngStream& stream) {
  spec.validate();
  if (spec.kind != MultiscaleSpec::Kind::Homogenization)
    throw std::invalid_argument("simulate_homogenization: spec kind mismatch");
  if (!(dtau > 0.0) || !(t_final >= 0.0))
    throw std::invalid_argument("simulate_homogenization: dtau must be positive, t_final >= 0");
  const double eps2 = spec.epsilon * spec.epsilon;
  detail::warn_fast_scale(dtau / eps2, "simulate_homogenization");
  const long long n = std::llround(t_final / dtau);
  const double slow_coupling = std::sqrt(spec.sigma / 2.0) / spec.epsilon;
  const double root_fast = std::sqrt(2.0 * dtau) / spec.epsilon;
  MatrixXd yz(n + 1, 2);
  double y = 0.5, z = 0.0;
  yz(0, 0) = y;
  yz(0, 1) = z;
  for (long long k = 0; k < n; ++k) {
    const double y_next = y + (slow_coupling * z + spec.a * y) * dtau;
    const double z_next = z - z / eps2 * dtau + root_fast * stream.normal();
    y = y_next;
    z = z_next;
    yz(k + 1, 0) = y;
    yz(k + 1, 1) = z;
  }
  return yz;
}

inline SimulatedPath simulate_homogenization(const MultiscaleSpec& spec, double dtau,
                                             double t_final, RngStream& stream) {
  const MatrixXd yz = simulate_homogenization_full(spec, dtau, t_final, stream);
  SimulatedPath path;
  path.dt = dtau;
  path.times = VectorXd::LinSpaced(yz.rows(), 0.0, dtau * (yz.rows() - 1));
  path.states = yz.col(0);
  path.increments.resize(0, 1);
  return path;
}

// ---------------------------------------------------------------------------
// Nonparametric periodic drift field

// Drift values at n_grid equispaced nodes of [0, L); evaluation is piecewise
// linear between nodes with b_i(x_j) = delta_ij and periodic wrap-around.
struct PeriodicDriftField {
  int n_grid = 0;
  VectorXd values;
  double domain_length = 2.0 * M_PI;

  double dx() const { return domain_length / n_grid; }

  double wrap(double x) const {
    double y = std::fmod(x, domain_length);
    if (y < 0.0) y += domain_length;
    return y;
  }

  // Node index and interpolation weight for x: f = (1-w) a_j + w a_{j+1}.
  void locate(double x, int& j, double& w) const {
    const double u = wrap(x) / dx();
    j = static_cast<int>(u);
    if (j >= n_grid) j = n_grid - 1;  // fmod landing exactly on L
    w = u - j;
  }

  double eval(double x, const VectorXd& coeffs) const {
    int j;
    double w;
    locate(x, j, w);
    const int jp = (j + 1) % n_grid;
    return (1.0 - w) * coeffs(j) + w * coeffs(jp);
  }
};

// f(x, a) = B(x) a with hat-function rows of B (two nonzeros summing to 1).
inline DriftModel drift_field_model(const PeriodicDriftField& field) {
  if (field.n_grid < 2) throw std::invalid_argument("drift_field_model: n_grid must be >= 2");
  DriftModel m;
  m.state_dim = 1;
  m.param_dim = field.n_grid;
  PeriodicDriftField geom = field;
  m.eval = [geom](const VectorXd& x, const VectorXd& a) -> VectorXd {
    VectorXd f(1);
    f(0) = geom.eval(x(0), a);
    return f;
  };
  m.eval_batch = [geom](const MatrixXd& states, const MatrixXd& params) -> MatrixXd {
    MatrixXd out(states.rows(), 1);
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
      int j;
      double w;
      geom.locate(states(i, 0), j, w);
      const int jp = (j + 1) % geom.n_grid;
      out(i, 0) = (1.0 - w) * params(i, j) + w * params(i, jp);
    }
    return out;
  };
  m.f0 = [](const VectorXd&) -> VectorXd { return VectorXd::Zero(1); };
  m.basis = [geom](const VectorXd& x) -> MatrixXd {
    MatrixXd b = MatrixXd::Zero(1, geom.n_grid);
    int j;
    double w;
    geom.locate(x(0), j, w);
    b(0, j) = 1.0 - w;
    b(0, (j + 1) % geom.n_grid) += w;
    return b;
  };
  return m;
}

// ---------------------------------------------------------------------------
// Finite-volume stochastic heat equation

// dq^i = theta (q^{i+1} - 2 q^i + q^{i-1})/dx^2 dt + sigma^{1/2} dx^{1/2} dW^i
// on a periodic grid; a single component j* is observed.
struct HeatFvModel {
  int n_grid = 0;
  double theta = 1.0;
  double sigma = 1.0;
  int obs_index = 0;
  double domain_length = 2.0 * M_PI;

  double dx() const { return domain_length / n_grid; }

  // Explicit-step stability requirement recorded for configuration checks.
  double stable_dt_bound() const { return theta * dx() * dx() / 2.0; }

  void validate() const {
    if (n_grid < 3) throw std::invalid_argument("HeatFvModel: n_grid must be >= 3");
    if (!(theta > 0.0)) throw std::invalid_argument("HeatFvModel: theta must be positive");
    if (!(sigma >= 0.0)) throw std::invalid_argument("HeatFvModel: sigma must be >= 0");
    if (obs_index < 0 || obs_index >= n_grid)
      throw std::invalid_argument("HeatFvModel: obs_index out of range");
  }
};

// Periodic three-point Laplacian of one state row, scaled by 1/dx^2. The
// stencil is grouped as ((q_+ - 2 q) + q_-) so constant fields map to exact zero.
inline void heat_laplacian_row(const Eigen::Ref<const RowVectorXd>& q, double inv_dx2,
                               Eigen::Ref<RowVectorXd> out) {
  const int n = static_cast<int>(q.size());
  for (int j = 0; j < n; ++j) {
    const double qp = q((j + 1) % n);
    const double qm = q((j + n - 1) % n);
    out(j) = ((qp - 2.0 * q(j)) + qm) * inv_dx2;
  }
}

inline MatrixXd heat_laplacian_dense(int n_grid, double dx) {
  MatrixXd L = MatrixXd::Zero(n_grid, n_grid);
  const double inv_dx2 = 1.0 / (dx * dx);
  for (int j = 0; j < n_grid; ++j) {
    L(j, j) = -2.0 * inv_dx2;
    L(j, (j + 1) % n_grid) = inv_dx2;
    L(j, (j + n_grid - 1) % n_grid) = inv_dx2;
  }
  return L;
}

// f(q, theta) = theta L q with theta free (param_dim = 1), linear structure
// B(q) = L q.
inline DriftModel heat_fv_drift(const HeatFvModel& model) {
  model.validate();
  const int n = model.n_grid;
  const double inv_dx2 = 1.0 / (model.dx() * model.dx());
  DriftModel m;
  m.state_dim = n;
  m.param_dim = 1;
  m.eval = [n, inv_dx2](const VectorXd& q, const VectorXd& theta) -> VectorXd {
    RowVectorXd lap(n);
    heat_laplacian_row(q.transpose(), inv_dx2, lap);
    return theta(0) * lap.transpose();
  };
  m.eval_batch = [n, inv_dx2](const MatrixXd& states, const MatrixXd& params) -> MatrixXd {
    MatrixXd out(states.rows(), n);
    RowVectorXd lap(n);
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
      heat_laplacian_row(states.row(i), inv_dx2, lap);
      out.row(i) = params(i, 0) * lap;
    }
    return out;
  };
  m.f0 = [n](const VectorXd&) -> VectorXd { return VectorXd::Zero(n); };
  m.basis = [n, inv_dx2](const VectorXd& q) -> MatrixXd {
    RowVectorXd lap(n);
    heat_laplacian_row(q.transpose(), inv_dx2, lap);
    return lap.transpose();
  };
  return m;
}

// G = sigma^{1/2} dx^{1/2} I, H = selector row for the observed component.
inline NoiseGeometry heat_fv_noise(const HeatFvModel& model, double r) {
  model.validate();
  if (r < 0.0) throw std::invalid_argument("heat_fv_noise: r must be >= 0");
  const int n = model.n_grid;
  const MatrixXd G = std::sqrt(model.sigma * model.dx()) * MatrixXd::Identity(n, n);
  MatrixXd H = MatrixXd::Zero(1, n);
  H(0, model.obs_index) = 1.0;
  MatrixXd R(1, 1);
  R << r;
  return NoiseGeometry::make(G, H, R);
}

}  // namespace enkbf
