#include "doctest.h"

#include "chp/thermal_dynamics.hpp"
#include "fixtures.hpp"

#include <cmath>
#include <random>

using namespace chp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kRho = 1000.0, kCp = 4182.0;

// Steady solution of m cp dT/dx = -(T - Ta)/R.
double analytic(double x, double inlet, double ambient, double m, double r) {
  return ambient + (inlet - ambient) * std::exp(-x / (m * kCp * r));
}

// Outlet error of a long run at constant inlet against the analytic profile.
double steady_error(int segments, double dt) {
  auto p = fixtures::pipe("P", "a", "b", NetworkSide::supply, 1, 2000.0, 0.05, 0.5, 0.0, 10.0, 10.0);
  const double dx = p.length / segments, m = 2.0;
  const int n = 400;
  p.ambient = fixtures::flat(n, 10.0);
  const MatrixXd tau = simulate_pipe(p, dt, dx, kRho, kCp, fixtures::flat(n, m), fixtures::flat(n, 90.0),
                                     fixtures::flat(segments + 1, 10.0));
  const double exact = analytic(p.length, 90.0, 10.0, m, p.resistance);
  return std::abs(tau(segments, n) - exact) / std::abs(exact);
}

}  // namespace

TEST_CASE("pipe coefficients") {
  auto p = fixtures::pipe("P", "a", "b", NetworkSide::supply, 2, 300.0, 0.01, 2.0);
  const auto k = pipe_coefficients(p, 900.0, 100.0, kRho, kCp, 0);
  CHECK(k.b == doctest::Approx(1e-3));
  CHECK(k.c == doctest::Approx(1.0 / 900.0));
  CHECK(k.a > k.c);
  CHECK(k.d == doctest::Approx(k.loss() * 10.0));

  p.resistance = 1e300;
  const auto lossless = pipe_coefficients(p, 900.0, 100.0, kRho, kCp, 0);
  CHECK(lossless.a == doctest::Approx(lossless.c));
  CHECK(lossless.d == doctest::Approx(0.0));

  p.area = 0.0;
  CHECK_THROWS_AS(pipe_coefficients(p, 900.0, 100.0, kRho, kCp, 0), InputError);
}

TEST_CASE("single segment update") {
  auto p = fixtures::pipe("P", "a", "b", NetworkSide::supply, 1, 300.0, 0.05, 2.0, 5.0, 30.0, 60.0);
  const auto k = pipe_coefficients(p, 3600.0, 100.0, kRho, kCp, 0);
  CHECK(step_segment(k, 12.0, 60.0, 60.0) == doctest::Approx(60.0));

  p.resistance = 1e300;
  const auto l = pipe_coefficients(p, 3600.0, 100.0, kRho, kCp, 0);
  CHECK(step_segment(l, 0.0, 73.0, 90.0) == doctest::Approx(73.0));
  const auto fast = pipe_coefficients(p, 1e12, 100.0, kRho, kCp, 0);
  CHECK(step_segment(fast, 10.0, 73.0, 90.0) == doctest::Approx(90.0));

  // The swapped factor gives a different, non-convex update.
  CHECK(step_segment(k, 12.0, 60.0, 60.0, ThermalScheme::swapped_factor) != doctest::Approx(60.0));
}

TEST_CASE("node mixing") {
  CHECK(mix_node(Eigen::Vector2d(80, 60), Eigen::Vector2d(1, 1), 0.0, 0.0) == doctest::Approx(70.0));
  CHECK(mix_node(Eigen::Vector2d(80, 60), Eigen::Vector2d(3, 1), 0.0, 0.0) == doctest::Approx(75.0));
  CHECK(mix_node(Eigen::Matrix<double, 1, 1>(55.0), Eigen::Matrix<double, 1, 1>(4.0), 0.0, 0.0) == 55.0);
  CHECK(mix_node(Eigen::Matrix<double, 1, 1>(50.0), Eigen::Matrix<double, 1, 1>(1.0), 1.0, 70.0) ==
        doctest::Approx(60.0));
  CHECK_THROWS_AS(mix_node(Eigen::Vector2d(80, 60), Eigen::Vector2d(0, 0), 0.0, 0.0), InputError);
}

TEST_CASE("steady profile converges to the analytic solution") {
  const double e50 = steady_error(50, 3600.0);
  CHECK(e50 <= 0.01);
  double prev = steady_error(5, 3600.0);
  for (int s : {10, 20, 40, 80}) {
    const double e = steady_error(s, 3600.0);
    CHECK(e < prev);
    prev = e;
  }
}

TEST_CASE("steady recursion matches the closed form of the discrete scheme") {
  auto p = fixtures::pipe("P", "a", "b", NetworkSide::supply, 1, 500.0, 0.05, 1.0, 0.0, 10.0, 5.0);
  const double m = 3.0, dx = 100.0;
  const auto k = pipe_coefficients(p, 3600.0, dx, kRho, kCp, 0);
  const int n = 300;
  p.ambient = fixtures::flat(n, 5.0);
  const MatrixXd tau = simulate_pipe(p, 3600.0, dx, kRho, kCp, fixtures::flat(n, m), fixtures::flat(n, 80.0),
                                     fixtures::flat(6, 5.0));
  double expect = 80.0;
  for (int i = 1; i <= 5; ++i) {
    expect = (k.b * m * expect + k.loss() * 5.0) / (k.b * m + k.loss());
    CHECK(tau(i, n) == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("lossless identity and ambient fixed point") {
  auto p = fixtures::pipe("P", "a", "b", NetworkSide::supply, 1, 300.0, 0.05, 1e300);
  const int n = 200;
  p.ambient = fixtures::flat(n, 10.0);
  MatrixXd tau = simulate_pipe(p, 3600.0, 100.0, kRho, kCp, fixtures::flat(n, 4.0), fixtures::flat(n, 90.0),
                               fixtures::flat(4, 40.0));
  CHECK(std::abs(tau(3, n) - 90.0) <= 1e-9);

  auto q = fixtures::pipe("P", "a", "b", NetworkSide::supply, 1, 300.0, 0.05, 0.7);
  q.ambient = fixtures::flat(n, 12.5);
  tau = simulate_pipe(q, 3600.0, 100.0, kRho, kCp, fixtures::flat(n, 4.0), fixtures::flat(n, 12.5),
                      fixtures::flat(4, 12.5));
  CHECK((tau.array() == 12.5).all());
}

TEST_CASE("updates stay inside the envelope and are monotone in the inlet") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 12;
    auto p = fixtures::pipe("P", "a", "b", NetworkSide::supply, n, 100.0 + 900.0 * u(rng), 0.02 + 0.1 * u(rng),
                            0.2 + 3.0 * u(rng));
    VectorXd m(n), inlet(n);
    for (int t = 0; t < n; ++t) {
      m[t] = 20.0 * u(rng);
      inlet[t] = 40.0 + 60.0 * u(rng);
      p.ambient[t] = -5.0 + 20.0 * u(rng);
    }
    const int s = segment_count(p, 100.0);
    VectorXd init(s + 1);
    for (auto& v : init) v = 30.0 + 50.0 * u(rng);
    const MatrixXd tau = simulate_pipe(p, 900.0, 100.0, kRho, kCp, m, inlet, init);
    const double lo = std::min({init.minCoeff(), inlet.minCoeff(), p.ambient.minCoeff()});
    const double hi = std::max({init.maxCoeff(), inlet.maxCoeff(), p.ambient.maxCoeff()});
    CHECK(tau.minCoeff() >= lo - 1e-12);
    CHECK(tau.maxCoeff() <= hi + 1e-12);

    VectorXd hotter = inlet;
    hotter[static_cast<Eigen::Index>(rng() % n)] += 5.0;
    const MatrixXd warm = simulate_pipe(p, 900.0, 100.0, kRho, kCp, m, hotter, init);
    CHECK(((warm - tau).array() >= -1e-12).all());
  }
}

TEST_CASE("network sweep") {
  SUBCASE("uniform temperatures everywhere stay put") {
    auto in = fixtures::two_node(6);
    for (auto& n : in.heat.nodes) n.demand.setZero();
    for (std::size_t j = 0; j < 2; ++j) {
      auto& p = j == 0 ? in.heat.supply_pipes[0] : in.heat.return_pipes[0];
      p.ambient.setConstant(60.0);
      p.resistance = 1e300;
    }
    for (auto& v : in.initial_profiles) v.setConstant(60.0);
    FlowSchedule m(2, 6);
    m.matrix().setConstant(9.0);
    const auto st = simulate_network(in, m, MatrixXd::Constant(2, 6, 60.0));
    for (const auto& p : st.pipe_temps) CHECK((p.array() - 60.0).abs().maxCoeff() < 1e-12);
    CHECK((st.node_supply.array() - 60.0).abs().maxCoeff() < 1e-12);
    CHECK((st.node_return.array() - 60.0).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("delivered heat equals cp m (supply - return) at the load exchanger") {
    const auto in = fixtures::two_node(4);
    FlowSchedule m(2, 4);
    m.matrix().setConstant(15.0);
    const auto st = simulate_network(in, m, MatrixXd::Constant(2, 4, 90.0));
    for (int t = 0; t < 4; ++t) {
      CHECK(st.node_heat(1, t) == doctest::Approx(in.heat.nodes[1].demand[t]));
      CHECK(st.node_heat(1, t) ==
            doctest::Approx(kCp * st.exchanger_flow(1, t) * (st.exchanger_supply(1, t) - st.exchanger_return(1, t))));
      CHECK(st.node_supply(1, t) == doctest::Approx(st.outlet(0)[t]));
      CHECK(st.inlet(0)[t] == doctest::Approx(st.node_supply(0, t)));
    }
  }
  SUBCASE("two sources mixing into one load") {
    DispatchInstance in;
    const int n = 3;
    in.periods = n, in.dt = 3600.0, in.dx = 100.0;
    in.heat.nodes = {fixtures::source_node("A"), fixtures::source_node("B"),
                     fixtures::load_node("C", fixtures::flat(n, 1e6))};
    using fixtures::pipe;
    in.heat.supply_pipes = {pipe("AC", "A", "C", NetworkSide::supply, n, 200.0, 0.05, 1e300),
                            pipe("BC", "B", "C", NetworkSide::supply, n, 300.0, 0.05, 1e300)};
    in.heat.return_pipes = {pipe("CA", "C", "A", NetworkSide::ret, n, 200.0, 0.05, 1e300),
                            pipe("CB", "C", "B", NetworkSide::ret, n, 300.0, 0.05, 1e300)};
    const Eigen::Vector3d src(90.0, 70.0, 0.0);
    in.initial_profiles = steady_state_profiles(in, Eigen::Vector4d(6.0, 2.0, 6.0, 2.0), src);
    FlowSchedule m(4, n);
    m.matrix().colwise() = Eigen::Vector4d(6.0, 2.0, 6.0, 2.0);
    MatrixXd temps = src.replicate(1, n);
    const auto st = simulate_network(in, m, temps);
    for (int t = 0; t < n; ++t) CHECK(st.node_supply(2, t) == doctest::Approx((6.0 * 90 + 2.0 * 70) / 8.0));
  }
  SUBCASE("negative flow is rejected") {
    const auto in = fixtures::two_node(2);
    FlowSchedule m(2, 2);
    m(0, 0) = -1.0;
    CHECK_THROWS_AS(simulate_network(in, m, MatrixXd::Constant(2, 2, 90.0)), InputError);
  }
}
