#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "enkbf/errors.hpp"
#include "enkbf/sde.hpp"

// Ensemble Kalman-Bucy filters for increment observations with correlated
// model and measurement errors.
//
// Joint state/parameter update, per particle i with h^i = H f(X^i, A^i),
// Theta^i, Xi^i ~ N(0, I):
//
//   dI^i = dY - h^i dt - dt^{1/2} H G Theta^i - dt^{1/2} R^{1/2} Xi^i
//   Kx   = (Pxh + Q H^T) (C + dt Phh)^{-1}
//   Ka   =  Pah           (C + dt Phh)^{-1}
//   X^i <- X^i + dt f(X^i,A^i) + dt^{1/2} G Theta^i + Kx dI^i
//   A^i <- A^i + Ka dI^i
//
// The same Theta^i drives both the state propagation and the innovation; that
// correlation is what makes the filter consistent for dY = H dX + noise. With
// R = 0, H = I and a collapsed ensemble the update telescopes to X^i <- X^i + dY,
// and the arithmetic below is grouped so that this holds bit-exactly.
//
// Parameter-only update (H = I, R = 0, observed signal equals the state,
// h(a) = f(Y_n, a)):
//
//   A^i <- A^i + dt Pah (Q + dt Phh)^{-1} dI^i
//   dI^i = dY - (h(A^i) + h_bar)/2 dt                      (deterministic)
//   dI^i = dY - h(A^i) dt - dt^{1/2} G Xi^i                (stochastic)
//
// Empirical covariances use the unbiased divisor M-1 and are computed in
// centered form (algebraically identical to the uncentered estimators).
// Column means are evaluated relative to the first row so that an ensemble of
// identical particles yields exactly zero deviations, which in turn makes the
// degenerate gains exact.

namespace enkbf {

struct Ensemble {
  MatrixXd states;  // M x nx (nx may be 0 for parameter-only problems)
  MatrixXd params;  // M x na (na may be 0 for state-only problems)

  int size() const { return static_cast<int>(std::max(states.rows(), params.rows())); }
};

enum class InnovationMode { Deterministic, Stochastic };

struct EmpiricalMoments {
  RowVectorXd h_mean;  // ny
  MatrixXd P_ah;       // na x ny
  MatrixXd P_xh;       // nx x ny
  MatrixXd P_hh;       // ny x ny
};

struct EnsembleStats {
  VectorXd mean_x, var_x;
  VectorXd mean_a, var_a;
};

namespace detail {

// Column means shifted by the first row: exact for identical rows.
inline RowVectorXd shifted_colwise_mean(const MatrixXd& m) {
  if (m.cols() == 0) return RowVectorXd(0);
  const RowVectorXd r0 = m.row(0);
  return r0 + (m.rowwise() - r0).colwise().mean();
}

inline MatrixXd centered(const MatrixXd& m) {
  if (m.cols() == 0) return m;
  return m.rowwise() - shifted_colwise_mean(m);
}

// Factor S = C + dt * sym(Phh); throws if the factorization is not positive.
inline Eigen::LDLT<MatrixXd> factor_innovation_cov(const MatrixXd& C, const MatrixXd& P_hh,
                                                   double dt, const char* where) {
  const MatrixXd S = C + dt * symmetrized(P_hh);
  Eigen::LDLT<MatrixXd> ldlt(S);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
    throw numerical_error(std::string(where) + ": regularized innovation covariance "
                          "C + dt*Phh is not positive definite");
  return ldlt;
}

}  // namespace detail

inline std::vector<RngStream> make_particle_streams(std::uint64_t seed, std::uint64_t base_id,
                                                    int m) {
  std::vector<RngStream> streams;
  streams.reserve(m);
  for (int i = 0; i < m; ++i) streams.emplace_back(seed, base_id + static_cast<std::uint64_t>(i));
  return streams;
}

// h_values: M x ny, one observation-map evaluation per particle.
inline EmpiricalMoments empirical_moments(const Ensemble& ensemble, const MatrixXd& h_values) {
  const int m = ensemble.size();
  if (m < 2) throw std::invalid_argument("empirical_moments: need at least two particles");
  if (h_values.rows() != m)
    throw std::invalid_argument("empirical_moments: h_values row count must equal ensemble size");
  EmpiricalMoments mo;
  mo.h_mean = detail::shifted_colwise_mean(h_values);
  const MatrixXd hc = h_values.rowwise() - mo.h_mean;
  const double w = 1.0 / (m - 1);
  mo.P_ah = w * (detail::centered(ensemble.params).transpose() * hc);
  mo.P_xh = w * (detail::centered(ensemble.states).transpose() * hc);
  mo.P_hh = w * (hc.transpose() * hc);
  return mo;
}

inline EnsembleStats ensemble_stats(const Ensemble& ensemble) {
  const int m = ensemble.size();
  if (m < 2) throw std::invalid_argument("ensemble_stats: need at least two particles");
  const double w = 1.0 / (m - 1);
  EnsembleStats s;
  s.mean_x = detail::shifted_colwise_mean(ensemble.states).transpose();
  s.var_x = w * detail::centered(ensemble.states).array().square().colwise().sum().transpose();
  s.mean_a = detail::shifted_colwise_mean(ensemble.params).transpose();
  s.var_a = w * detail::centered(ensemble.params).array().square().colwise().sum().transpose();
  return s;
}

// Joint state + parameter step (stochastic innovation). Updates the ensemble
// in place; one Theta (nw) and one Xi (ny) block is drawn per particle from
// its own stream, in that order.
inline void joint_filter_step(Ensemble& ensemble, const VectorXd& dY, double dt,
                              const DriftModel& model, const NoiseGeometry& noise,
                              std::vector<RngStream>& particle_streams) {
  const int m = ensemble.size();
  if (m < 2) throw std::invalid_argument("joint_filter_step: need at least two particles");
  if (!(dt > 0.0)) throw std::invalid_argument("joint_filter_step: dt must be positive");
  if (dY.size() != noise.ny) throw std::invalid_argument("joint_filter_step: dY dimension mismatch");
  if (ensemble.states.cols() != noise.nx)
    throw std::invalid_argument("joint_filter_step: state dimension mismatch");
  if (static_cast<int>(particle_streams.size()) < m)
    throw std::invalid_argument("joint_filter_step: need one stream per particle");

  const MatrixXd f_all = eval_drift_all(model, ensemble.states, ensemble.params);  // M x nx
  const MatrixXd h_all = f_all * noise.H.transpose();                              // M x ny
  const EmpiricalMoments mo = empirical_moments(ensemble, h_all);

  const auto ldlt = detail::factor_innovation_cov(noise.C, mo.P_hh, dt, "joint_filter_step");
  const MatrixXd gain_x =
      ldlt.solve((mo.P_xh + noise.Q * noise.H.transpose()).transpose()).transpose();  // nx x ny
  const MatrixXd gain_a = ldlt.solve(mo.P_ah.transpose()).transpose();               // na x ny

  const double root_dt = std::sqrt(dt);
  MatrixXd theta(m, noise.nw), xi(m, noise.ny);
  for (int i = 0; i < m; ++i) {
    particle_streams[i].fill_normal(theta.row(i));
    particle_streams[i].fill_normal(xi.row(i));
  }

  const MatrixXd model_inc = dt * f_all + root_dt * (theta * noise.G.transpose());   // M x nx
  const MatrixXd pred_obs =
      model_inc * noise.H.transpose() + root_dt * (xi * noise.sqrt_R.transpose());   // M x ny

  // X update grouped as (model increment - Kx * predicted observation) + Kx dY
  // so the noiseless fully-observed case telescopes exactly.
  ensemble.states += model_inc - pred_obs * gain_x.transpose();
  ensemble.states.rowwise() += (gain_x * dY).transpose();
  if (ensemble.params.cols() > 0) {
    ensemble.params -= pred_obs * gain_a.transpose();
    ensemble.params.rowwise() += (gain_a * dY).transpose();
  }
}

// Pure state estimation: a joint step with an empty parameter block.
inline void state_filter_step(Ensemble& ensemble, const VectorXd& dY, double dt,
                              const DriftModel& model, const NoiseGeometry& noise,
                              std::vector<RngStream>& particle_streams) {
  if (ensemble.params.cols() != 0)
    throw std::invalid_argument("state_filter_step: parameter block must be empty");
  joint_filter_step(ensemble, dY, dt, model, noise, particle_streams);
}

// Parameter-only step for noiseless, fully observed increments (H = I, R = 0).
// y_current is the observed state Y_n at which the observation map is frozen.
inline void param_filter_step(Ensemble& ensemble, const VectorXd& dY, double dt,
                              const DriftModel& model, const NoiseGeometry& noise,
                              InnovationMode mode, const VectorXd& y_current,
                              std::vector<RngStream>& particle_streams) {
  const int m = ensemble.size();
  if (m < 2) throw std::invalid_argument("param_filter_step: need at least two particles");
  if (!(dt > 0.0)) throw std::invalid_argument("param_filter_step: dt must be positive");
  if (noise.ny != noise.nx || !noise.H.isIdentity(0.0) || noise.R.cwiseAbs().maxCoeff() != 0.0)
    throw std::invalid_argument("param_filter_step: requires H = I and R = 0");
  if (dY.size() != noise.ny || y_current.size() != noise.nx)
    throw std::invalid_argument("param_filter_step: dimension mismatch");
  if (mode == InnovationMode::Stochastic && static_cast<int>(particle_streams.size()) < m)
    throw std::invalid_argument("param_filter_step: need one stream per particle");

  // h(a) = f(Y_n, a), evaluated for every particle at the frozen Y_n.
  const MatrixXd y_rep = y_current.transpose().replicate(m, 1);
  const MatrixXd h_all = eval_drift_all(model, y_rep, ensemble.params);
  const EmpiricalMoments mo = empirical_moments(ensemble, h_all);

  const auto ldlt = detail::factor_innovation_cov(noise.Q, mo.P_hh, dt, "param_filter_step");
  const MatrixXd gain = dt * ldlt.solve(mo.P_ah.transpose()).transpose();  // na x ny

  MatrixXd innovation(m, noise.ny);
  if (mode == InnovationMode::Deterministic) {
    innovation = (-0.5 * dt) * (h_all.rowwise() + mo.h_mean);
  } else {
    MatrixXd xi(m, noise.nw);
    for (int i = 0; i < m; ++i) particle_streams[i].fill_normal(xi.row(i));
    innovation = -dt * h_all - std::sqrt(dt) * (xi * noise.G.transpose());
  }
  innovation.rowwise() += dY.transpose();

  ensemble.params += innovation * gain.transpose();
}

}  // namespace enkbf
