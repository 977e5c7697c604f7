#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "enkbf/exact_kbf.hpp"
#include "enkbf/filter.hpp"
#include "enkbf/models.hpp"

using namespace enkbf;

namespace {

// Brute-force double-loop covariance oracle, uncentered exactly as defined:
// (1/(M-1)) sum_i u_i (h_i - h_bar)^T.
MatrixXd brute_force_cov(const MatrixXd& u, const MatrixXd& h) {
  const Eigen::Index m = h.rows();
  RowVectorXd h_bar = RowVectorXd::Zero(h.cols());
  for (Eigen::Index i = 0; i < m; ++i) h_bar += h.row(i);
  h_bar /= static_cast<double>(m);
  MatrixXd p = MatrixXd::Zero(u.cols(), h.cols());
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index a = 0; a < u.cols(); ++a)
      for (Eigen::Index b = 0; b < h.cols(); ++b)
        p(a, b) += u(i, a) * (h(i, b) - h_bar(b));
  return p / static_cast<double>(m - 1);
}

Ensemble random_ensemble(int m, int nx, int na, std::uint64_t seed) {
  Ensemble e;
  e.states.resize(m, nx);
  e.params.resize(m, na);
  RngStream s(seed, 0);
  s.fill_normal(e.states);
  s.fill_normal(e.params);
  return e;
}

}  // namespace

TEST_CASE("empirical moments vanish exactly for a degenerate ensemble") {
  Ensemble e;
  e.states = MatrixXd::Constant(5, 2, 1.3);
  e.params = MatrixXd::Constant(5, 1, -0.7);
  const MatrixXd h = MatrixXd::Constant(5, 2, 0.1);
  const EmpiricalMoments mo = empirical_moments(e, h);
  REQUIRE(mo.P_ah.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(mo.P_xh.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(mo.P_hh.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(mo.h_mean(0) == 0.1);
}

TEST_CASE("empirical moments match the two-particle hand computation") {
  Ensemble e;
  e.states.resize(2, 0);
  e.params.resize(2, 1);
  e.params << 0.0, 2.0;
  MatrixXd h(2, 1);
  h << 0.0, 4.0;
  const EmpiricalMoments mo = empirical_moments(e, h);
  REQUIRE(mo.h_mean(0) == Catch::Approx(2.0));
  REQUIRE(mo.P_ah(0, 0) == Catch::Approx(4.0));
  REQUIRE(mo.P_hh(0, 0) == Catch::Approx(8.0));
}

TEST_CASE("centered implementation equals the uncentered definition") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const Ensemble e = random_ensemble(7, 3, 2, seed);
    MatrixXd h(7, 2);
    RngStream s(seed, 99);
    s.fill_normal(h);
    const EmpiricalMoments mo = empirical_moments(e, h);
    REQUIRE((mo.P_ah - brute_force_cov(e.params, h)).cwiseAbs().maxCoeff() < 1e-13);
    REQUIRE((mo.P_xh - brute_force_cov(e.states, h)).cwiseAbs().maxCoeff() < 1e-13);
    REQUIRE((mo.P_hh - brute_force_cov(h, h)).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("P_hh is symmetric as computed") {
  const Ensemble e = random_ensemble(9, 1, 0, 5);
  MatrixXd h(9, 3);
  RngStream s(5, 99);
  s.fill_normal(h);
  const EmpiricalMoments mo = empirical_moments(e, h);
  REQUIRE((mo.P_hh - mo.P_hh.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("moments and stats require at least two particles") {
  Ensemble e;
  e.states = MatrixXd::Zero(1, 1);
  e.params.resize(1, 0);
  REQUIRE_THROWS_AS(empirical_moments(e, MatrixXd::Zero(1, 1)), std::invalid_argument);
  REQUIRE_THROWS_AS(ensemble_stats(e), std::invalid_argument);
}

TEST_CASE("ensemble stats: hand case and collapsed case") {
  Ensemble e;
  e.states.resize(2, 1);
  e.states << 0.0, 2.0;
  e.params.resize(2, 0);
  const EnsembleStats st = ensemble_stats(e);
  REQUIRE(st.mean_x(0) == Catch::Approx(1.0));
  REQUIRE(st.var_x(0) == Catch::Approx(2.0));

  Ensemble c;
  c.states = MatrixXd::Constant(8, 2, 0.37);
  c.params.resize(8, 0);
  REQUIRE(ensemble_stats(c).var_x.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero basis at the current observation leaves parameters unchanged") {
  // f(x, a) = sin(x) * a: at x = 0 the basis vanishes, so P_ah = 0 exactly.
  DriftModel m;
  m.state_dim = 1;
  m.param_dim = 1;
  m.eval = [](const VectorXd& x, const VectorXd& a) -> VectorXd { return std::sin(x(0)) * a; };
  const NoiseGeometry ng = NoiseGeometry::scalar(0.5, 0.0);
  Ensemble e;
  e.states.resize(4, 0);
  e.params.resize(4, 1);
  e.params << -1.0, 0.5, 2.0, 0.25;
  const MatrixXd before = e.params;
  auto streams = make_particle_streams(3, 100, 4);
  VectorXd dY(1), y(1);
  dY << 0.123;
  y << 0.0;
  param_filter_step(e, dY, 0.01, m, ng, InnovationMode::Stochastic, y, streams);
  REQUIRE(e.params == before);
}

TEST_CASE("parameter update reproduces the hand-evaluated gain") {
  // Two particles engineered so P_ah = 1 and P_hh = 2 at Y = 2; with
  // dt = 0.005, Q = 0.5 and an innovation increment of 0.01 the parameter
  // moves by 0.005 * (1 / 0.51) * 0.01 = 9.8039e-5.
  const double dt = 0.005;
  const NoiseGeometry ng = NoiseGeometry::scalar(0.5, 0.0);
  Ensemble e;
  e.states.resize(2, 0);
  e.params.resize(2, 1);
  e.params << 0.5, -0.5;
  VectorXd y(1);
  y << 2.0;
  // h_i = 2 a_i -> {1, -1}, h_bar = 0; the deterministic innovation is
  // dY - (h_i + h_bar) dt / 2, so dY = 0.01 + 0.0025 gives particle 0 exactly 0.01.
  VectorXd dY(1);
  dY << 0.01 + 0.5 * dt * 1.0;
  auto streams = make_particle_streams(3, 100, 2);
  const double a0 = e.params(0, 0);
  param_filter_step(e, dY, dt, ou_model(), ng, InnovationMode::Deterministic, y, streams);
  REQUIRE(e.params(0, 0) - a0 == Catch::Approx(0.005 * (1.0 / 0.51) * 0.01).epsilon(1e-12));
}

TEST_CASE("param filter requires H = I and R = 0") {
  const NoiseGeometry ng = NoiseGeometry::scalar(0.5, 0.01);
  Ensemble e;
  e.states.resize(2, 0);
  e.params = MatrixXd::Zero(2, 1);
  auto streams = make_particle_streams(3, 100, 2);
  VectorXd dY(1), y(1);
  dY << 0.0;
  y << 0.0;
  REQUIRE_THROWS_AS(
      param_filter_step(e, dY, 0.01, ou_model(), ng, InnovationMode::Stochastic, y, streams),
      std::invalid_argument);
}

TEST_CASE("noiseless fully-observed collapse telescopes bit-exactly") {
  // R = 0, H = I, all particles started at Y_0: every particle must equal the
  // accumulated observed signal exactly, at every step.
  for (std::uint64_t seed : {17ull, 18ull, 19ull}) {
    const double q = 0.25 + 0.5 * (seed % 3), dt = 0.02, a_true = -0.4;
    const int n_steps = 200, m = 2 + static_cast<int>(seed % 5);
    const NoiseGeometry ng = NoiseGeometry::scalar(q, 0.0);
    RngStream path_stream(seed, 0);
    VectorXd x0(1);
    x0 << 0.5;
    const MatrixXd states =
        simulate_path(ou_model(a_true), ng, x0, VectorXd(), dt, n_steps, path_stream).states;
    RngStream obs(seed, 1);
    const MatrixXd dy = synthesize_increments(states, ng, dt, obs);

    Ensemble e;
    e.states = MatrixXd::Constant(m, 1, x0(0));
    e.params.resize(m, 0);
    auto streams = make_particle_streams(seed, 1u << 20, m);
    double y_ref = x0(0);
    for (int k = 0; k < n_steps; ++k) {
      state_filter_step(e, dy.row(k).transpose(), dt, ou_model(a_true), ng, streams);
      y_ref += dy(k, 0);
      for (int i = 0; i < m; ++i) REQUIRE(e.states(i, 0) == y_ref);
    }
  }
}

TEST_CASE("collapsed ensemble with zero gain does not move") {
  // f = 0, G = 0, R > 0: P_xh = 0 exactly, so the update is identically zero.
  DriftModel m;
  m.state_dim = 2;
  m.param_dim = 0;
  m.eval = [](const VectorXd&, const VectorXd&) { return VectorXd::Zero(2); };
  const NoiseGeometry ng = NoiseGeometry::make(MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2),
                                               0.1 * MatrixXd::Identity(2, 2));
  Ensemble e;
  e.states = MatrixXd::Constant(6, 2, 0.4);
  e.params.resize(6, 0);
  const MatrixXd before = e.states;
  auto streams = make_particle_streams(5, 1u << 20, 6);
  VectorXd dY(2);
  dY << 0.3, -0.2;
  state_filter_step(e, dY, 0.05, m, ng, streams);
  REQUIRE(e.states == before);
}

TEST_CASE("state_filter_step rejects a non-empty parameter block") {
  Ensemble e;
  e.states = MatrixXd::Zero(3, 1);
  e.params = MatrixXd::Zero(3, 1);
  const NoiseGeometry ng = NoiseGeometry::scalar(0.5, 0.01);
  auto streams = make_particle_streams(5, 0, 3);
  VectorXd dY(1);
  dY << 0.0;
  REQUIRE_THROWS_AS(state_filter_step(e, dY, 0.01, ou_model(-0.5), ng, streams),
                    std::invalid_argument);
}

TEST_CASE("implemented gain converges to the exact linear gain at rate M^{-1/2}") {
  // Gaussian ensemble with known covariance P, linear drift F: the empirical
  // (P_xh + Q H^T) C^{-1} must approach (P F^T + Q) H^T C^{-1}, with errors
  // dropping by about sqrt(10) per decade of M.
  MatrixXd F(2, 2);
  F << -0.5, 0.2, 0.0, -1.0;
  MatrixXd G(2, 2);
  G << 0.6, 0.0, 0.1, 0.5;
  MatrixXd H(1, 2);
  H << 1.0, 0.4;
  MatrixXd R(1, 1);
  R << 0.05;
  const NoiseGeometry ng = NoiseGeometry::make(G, H, R);
  MatrixXd P(2, 2);
  P << 0.8, 0.3, 0.3, 0.9;
  const MatrixXd sqrt_P = psd_sqrt(P);
  const MatrixXd exact_gain = (P * F.transpose() + ng.Q) * H.transpose() * ng.C.inverse();

  auto mean_error = [&](int m, std::uint64_t seed) {
    const int reps = 20;
    double acc = 0.0;
    for (int rep = 0; rep < reps; ++rep) {
      RngStream s(seed, static_cast<std::uint64_t>(rep));
      MatrixXd z(m, 2);
      s.fill_normal(z);
      Ensemble e;
      e.states = z * sqrt_P.transpose();
      e.params.resize(m, 0);
      const MatrixXd h = (e.states * F.transpose()) * H.transpose();
      const EmpiricalMoments mo = empirical_moments(e, h);
      const MatrixXd gain = (mo.P_xh + ng.Q * H.transpose()) * ng.C.inverse();
      acc += (gain - exact_gain).norm() / exact_gain.norm();
    }
    return acc / reps;
  };

  const double e2 = mean_error(100, 31);
  const double e3 = mean_error(1000, 32);
  const double e4 = mean_error(10000, 33);
  REQUIRE(e2 / e3 == Catch::Approx(std::sqrt(10.0)).margin(1.6));
  REQUIRE(e3 / e4 == Catch::Approx(std::sqrt(10.0)).margin(1.6));
  REQUIRE(e2 / e4 > 10.0 / 3.0);
  REQUIRE(e2 / e4 < 30.0);
}

TEST_CASE("joint filter matches a state-only step when the parameter block is empty") {
  const NoiseGeometry ng = NoiseGeometry::scalar(0.5, 0.01);
  VectorXd dY(1);
  dY << 0.05;
  Ensemble a, b;
  a.states = b.states = MatrixXd::Random(10, 1);
  a.params.resize(10, 0);
  b.params.resize(10, 0);
  auto sa = make_particle_streams(7, 1u << 20, 10);
  auto sb = make_particle_streams(7, 1u << 20, 10);
  joint_filter_step(a, dY, 0.01, ou_model(-0.5), ng, sa);
  state_filter_step(b, dY, 0.01, ou_model(-0.5), ng, sb);
  REQUIRE(a.states == b.states);
}

TEST_CASE("filter runs are deterministic given seeds") {
  const NoiseGeometry ng = NoiseGeometry::scalar(0.5, 0.01);
  auto run = [&]() {
    Ensemble e;
    e.states = MatrixXd::Constant(20, 1, 0.5);
    e.params.resize(20, 1);
    RngStream init(9, 4);
    for (int i = 0; i < 20; ++i) e.params(i, 0) = -0.5 + init.normal();
    auto streams = make_particle_streams(9, 1u << 20, 20);
    RngStream data(9, 0);
    VectorXd dY(1);
    for (int k = 0; k < 50; ++k) {
      dY(0) = 0.01 * data.normal();
      joint_filter_step(e, dY, 0.01, ou_model(), ng, streams);
    }
    return e;
  };
  const Ensemble r1 = run();
  const Ensemble r2 = run();
  REQUIRE(r1.states == r2.states);
  REQUIRE(r1.params == r2.params);
}
