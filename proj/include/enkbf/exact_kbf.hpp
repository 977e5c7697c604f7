#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "enkbf/errors.hpp"
#include "enkbf/sde.hpp"

// Exact Kalman-Bucy filter for linear drift f(x) = F x with correlated model
// and measurement errors, plus the prediction-error log evidence and the
// quadratic-variation drift estimator.
//
//   dxbar = F xbar dt + (P F^T + Q) H^T C^{-1} (dY - H F xbar dt)
//   dP    = (F P + P F^T) dt + Q dt - (P F^T + Q) H^T C^{-1} H (F P + Q) dt
//
// Both equations are stepped with explicit Euler at the data step, the
// covariance re-symmetrized after every step. If P picks up an eigenvalue
// below -1e-10 * trace(P) the step aborts instead of clipping silently.

namespace enkbf {

struct LinearModel {
  MatrixXd F;
  NoiseGeometry noise;
};

struct GaussianBelief {
  VectorXd mean;
  MatrixXd cov;
};

inline void kb_mean_cov_step(const LinearModel& model, GaussianBelief& belief, const VectorXd& dY,
                             double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("kb_mean_cov_step: dt must be positive");
  const int nx = model.noise.nx;
  if (model.F.rows() != nx || model.F.cols() != nx)
    throw std::invalid_argument("kb_mean_cov_step: F dimension mismatch");
  if (belief.mean.size() != nx || belief.cov.rows() != nx || belief.cov.cols() != nx)
    throw std::invalid_argument("kb_mean_cov_step: belief dimension mismatch");
  if (dY.size() != model.noise.ny)
    throw std::invalid_argument("kb_mean_cov_step: dY dimension mismatch");

  const MatrixXd& Q = model.noise.Q;
  const MatrixXd& H = model.noise.H;
  Eigen::LDLT<MatrixXd> ldlt_C(model.noise.C);
  if (ldlt_C.info() != Eigen::Success || ldlt_C.vectorD().minCoeff() <= 0.0)
    throw numerical_error("kb_mean_cov_step: C is not positive definite");

  const MatrixXd FP = model.F * belief.cov;                       // F P
  const MatrixXd B = (FP.transpose() + Q) * H.transpose();        // (P F^T + Q) H^T
  const MatrixXd K = ldlt_C.solve(B.transpose()).transpose();     // B C^{-1}

  // By symmetry of P and Q, H (F P + Q) = B^T.
  const MatrixXd dP = FP + FP.transpose() + Q - K * B.transpose();
  const VectorXd drift = model.F * belief.mean;
  belief.mean += dt * drift + K * (dY - dt * (H * drift));
  belief.cov = detail::symmetrized(belief.cov + dt * dP);

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(belief.cov, Eigen::EigenvaluesOnly);
  const double floor = -1e-10 * std::max(belief.cov.trace(), 0.0);
  if (es.eigenvalues().minCoeff() < floor)
    throw numerical_error("kb_mean_cov_step: covariance lost positive semi-definiteness "
                          "(min eigenvalue " + std::to_string(es.eigenvalues().minCoeff()) + ")");
}

// Independently evaluable right-hand side of the covariance equation.
inline MatrixXd kb_cov_rhs(const LinearModel& model, const MatrixXd& P) {
  const MatrixXd& Q = model.noise.Q;
  const MatrixXd& H = model.noise.H;
  Eigen::LDLT<MatrixXd> ldlt_C(model.noise.C);
  const MatrixXd FP = model.F * P;
  const MatrixXd B = (FP.transpose() + Q) * H.transpose();
  const MatrixXd K = ldlt_C.solve(B.transpose()).transpose();
  return FP + FP.transpose() + Q - K * B.transpose();
}

// Sum over increments of log N(dY_n; H F xbar_n dt, S_n) with
// S_n = C dt + dt^2 (H F) P_n (H F)^T, interleaved with the filter recursion.
inline double log_evidence(const LinearModel& model, const MatrixXd& increments, double dt,
                           const GaussianBelief& belief0) {
  if (!(dt > 0.0)) throw std::invalid_argument("log_evidence: dt must be positive");
  if (increments.cols() != model.noise.ny)
    throw std::invalid_argument("log_evidence: increment dimension mismatch");
  const MatrixXd HF = model.noise.H * model.F;
  GaussianBelief belief = belief0;
  double total = 0.0;
  const double log_two_pi = std::log(2.0 * M_PI);
  for (Eigen::Index n = 0; n < increments.rows(); ++n) {
    const MatrixXd S = dt * model.noise.C + (dt * dt) * (HF * belief.cov * HF.transpose());
    Eigen::LLT<MatrixXd> llt(detail::symmetrized(S));
    if (llt.info() != Eigen::Success)
      throw numerical_error("log_evidence: innovation covariance not positive definite at step " +
                            std::to_string(n));
    const VectorXd residual = increments.row(n).transpose() - dt * (HF * belief.mean);
    const VectorXd z = llt.matrixL().solve(residual);
    double log_det = 0.0;
    for (int i = 0; i < model.noise.ny; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
    total += -0.5 * (model.noise.ny * log_two_pi + log_det + z.squaredNorm());
    kb_mean_cov_step(model, belief, increments.row(n).transpose(), dt);
  }
  return total;
}

// a_ML = sum_n Y_n (Y_{n+1} - Y_n) / sum_n Y_n^2 dtau  (scalar signal).
inline double mle_drift(const VectorXd& states, double dtau) {
  if (states.size() < 2) throw std::invalid_argument("mle_drift: need at least two samples");
  if (!(dtau > 0.0)) throw std::invalid_argument("mle_drift: dtau must be positive");
  double numer = 0.0, denom = 0.0;
  for (Eigen::Index n = 0; n + 1 < states.size(); ++n) {
    numer += states(n) * (states(n + 1) - states(n));
    denom += states(n) * states(n) * dtau;
  }
  if (denom == 0.0) throw std::domain_error("mle_drift: degenerate data (all-zero path)");
  return numer / denom;
}

}  // namespace enkbf
