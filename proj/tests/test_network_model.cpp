#include "doctest.h"

#include "chp/network_model.hpp"
#include "fixtures.hpp"

#include <algorithm>
#include <random>

using namespace chp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

bool mentions(const ValidationReport& rep, const std::string& needle) {
  return std::any_of(rep.violations.begin(), rep.violations.end(),
                     [&](const std::string& v) { return v.find(needle) != std::string::npos; });
}

Line line(const std::string& id, const std::string& from, const std::string& to, double x) {
  Line l;
  l.id = id, l.from = from, l.to = to, l.reactance = x, l.limit = fixtures::flat(1, 1e9);
  return l;
}

// DC flows by solving the full Laplacian with the slack angle fixed at zero.
VectorXd dc_flows(const ElectricNetwork& net, const VectorXd& injection) {
  const auto nb = static_cast<Eigen::Index>(net.buses.size());
  MatrixXd lap = MatrixXd::Zero(nb, nb);
  for (const auto& l : net.lines) {
    const int f = net.bus_index(l.from), t = net.bus_index(l.to);
    lap(f, f) += 1 / l.reactance, lap(t, t) += 1 / l.reactance;
    lap(f, t) -= 1 / l.reactance, lap(t, f) -= 1 / l.reactance;
  }
  lap.row(0).setZero();
  lap(0, 0) = 1.0;
  VectorXd rhs = injection;
  rhs[0] = 0.0;
  const VectorXd theta = lap.fullPivLu().solve(rhs);
  VectorXd flows(static_cast<Eigen::Index>(net.lines.size()));
  for (std::size_t i = 0; i < net.lines.size(); ++i) {
    const auto& l = net.lines[i];
    flows[static_cast<Eigen::Index>(i)] = (theta[net.bus_index(l.from)] - theta[net.bus_index(l.to)]) / l.reactance;
  }
  return flows;
}

}  // namespace

TEST_CASE("segment counts round up and never drop below one") {
  HeatPipe p;
  p.length = 300.0;
  CHECK(segment_count(p, 100.0) == 3);
  p.length = 250.0;
  CHECK(segment_count(p, 100.0) == 3);
  p.length = 1.0;
  CHECK(segment_count(p, 100.0) == 1);
  CHECK_THROWS_AS(segment_count(p, 0.0), InputError);
}

TEST_CASE("node mass flow from the incidence matrix") {
  MatrixXd a(2, 1);
  a << -1, 1;
  CHECK(node_mass_flow(a, VectorXd::Constant(1, 5.0)).isApprox(Eigen::Vector2d(-5, 5)));
  CHECK(node_mass_flow(a, VectorXd::Zero(1)).isZero());

  // Through node: 3 in, 3 out.
  MatrixXd b(3, 2);
  b << -1, 0, 1, -1, 0, 1;
  CHECK(node_mass_flow(b, Eigen::Vector2d(3, 3))[1] == 0.0);
  CHECK_THROWS_AS(node_mass_flow(b, VectorXd::Zero(3)), InputError);
}

TEST_CASE("incidence columns sum to zero for any flow") {
  const auto in = fixtures::three_node();
  for (auto side : {NetworkSide::supply, NetworkSide::ret}) {
    const MatrixXd a = in.heat.incidence(side);
    CHECK(a.colwise().sum().isZero());
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 20.0);
    VectorXd m(a.cols());
    for (auto& v : m) v = u(rng);
    CHECK(std::abs(node_mass_flow(a, m).sum()) < 1e-12);
  }
  // Supply pipe S12 leaves node 1 and enters node 2.
  const MatrixXd s = in.heat.incidence(NetworkSide::supply);
  CHECK(s(0, 0) == -1.0);
  CHECK(s(1, 0) == 1.0);
}

TEST_CASE("radial sides: pipes = participating nodes - components") {
  const auto in = fixtures::three_node();
  CHECK(in.heat.supply_pipes.size() == in.heat.node_count() - 1);
  CHECK(in.heat.return_pipes.size() == in.heat.node_count() - 1);
  CHECK(validate(in).ok());
}

TEST_CASE("shift factors") {
  SUBCASE("two buses, slack at bus 1") {
    ElectricNetwork net;
    net.buses = {{"1", fixtures::flat(1, 0)}, {"2", fixtures::flat(1, 0)}};
    net.lines = {line("12", "1", "2", 0.1)};
    const MatrixXd sf = shift_factors(net);
    CHECK(sf(0, 0) == doctest::Approx(0.0));
    CHECK(sf(0, 1) == doctest::Approx(-1.0));
  }
  SUBCASE("triangle with equal reactances splits 2/3 and 1/3") {
    ElectricNetwork net;
    net.buses = {{"1", fixtures::flat(1, 0)}, {"2", fixtures::flat(1, 0)}, {"3", fixtures::flat(1, 0)}};
    net.lines = {line("12", "1", "2", 0.2), line("13", "1", "3", 0.2), line("23", "2", "3", 0.2)};
    const VectorXd flows = shift_factors(net) * Eigen::Vector3d(0.0, 1.0, 0.0);
    CHECK(flows[0] == doctest::Approx(-2.0 / 3.0));
    CHECK(flows[1] == doctest::Approx(-1.0 / 3.0));
    CHECK(flows[2] == doctest::Approx(1.0 / 3.0));
    CHECK((shift_factors(net) * VectorXd::Zero(3)).isZero());
  }
  SUBCASE("random meshed networks agree with a direct DC solve") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
      const int nb = 2 + trial % 4;
      ElectricNetwork net;
      for (int i = 0; i < nb; ++i) net.buses.push_back({std::to_string(i), fixtures::flat(1, 0)});
      for (int i = 1; i < nb; ++i)  // spanning tree, then extra chords
        net.lines.push_back(line("t" + std::to_string(i), std::to_string(rng() % i), std::to_string(i), u(rng)));
      for (int i = 0; i + 2 < nb; ++i)
        if (rng() % 2) net.lines.push_back(line("c" + std::to_string(i), std::to_string(i), std::to_string(nb - 1), u(rng)));
      VectorXd inj(nb);
      for (auto& v : inj) v = u(rng) - 0.5;
      inj[0] -= inj.sum();
      const VectorXd flows = shift_factors(net) * inj;
      CHECK((flows - dc_flows(net, inj)).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(shift_factors(net).col(0).isZero());
    }
  }
  SUBCASE("disconnected and zero-reactance networks are rejected") {
    ElectricNetwork net;
    net.buses = {{"1", fixtures::flat(1, 0)}, {"2", fixtures::flat(1, 0)}, {"3", fixtures::flat(1, 0)}};
    net.lines = {line("12", "1", "2", 0.1)};
    CHECK_THROWS_AS(shift_factors(net), InputError);
    net.lines.push_back(line("23", "2", "3", 0.0));
    CHECK_THROWS_AS(shift_factors(net), InputError);
  }
}

TEST_CASE("validation reports each broken invariant") {
  SUBCASE("cycle in the supply graph") {
    auto in = fixtures::three_node();
    in.heat.supply_pipes.push_back(fixtures::pipe("S23", "2", "3", NetworkSide::supply, in.periods));
    CHECK(mentions(validate(in), "supply graph not radial"));
  }
  SUBCASE("negative definite cost") {
    auto in = fixtures::two_node();
    in.sources[0].eta.row(2).setConstant(-1.0);
    in.sources[0].eta.row(4).setZero();
    in.sources[0].eta.row(5).setZero();
    CHECK(mentions(validate(in), "cost not convex"));
  }
  SUBCASE("inverted flow bounds name the pipe") {
    auto in = fixtures::two_node();
    in.heat.supply_pipes[0].flow_min[1] = 40.0;
    CHECK(mentions(validate(in), "pipe P1: flow_min exceeds flow_max"));
  }
  SUBCASE("empty horizon") {
    auto in = fixtures::two_node();
    in.periods = 0;
    CHECK(mentions(validate(in), "N must be at least 1"));
  }
  SUBCASE("unbounded operating region") {
    auto in = fixtures::two_node();
    in.sources[0].polytope.pop_back();
    CHECK(mentions(validate(in), "unbounded"));
  }
  SUBCASE("missing initial profile") {
    auto in = fixtures::two_node();
    in.initial_profiles.pop_back();
    CHECK(mentions(validate(in), "initial temperatures"));
  }
}
