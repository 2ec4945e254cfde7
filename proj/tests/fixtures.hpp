#pragma once

#include "chp/network_model.hpp"
#include "chp/thermal_dynamics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace fixtures {

using chp::DispatchInstance;
using Eigen::VectorXd;

inline VectorXd flat(int n, double v) { return VectorXd::Constant(n, v); }

inline chp::HeatPipe pipe(const std::string& id, const std::string& from, const std::string& to, chp::NetworkSide side,
                          int n, double length = 300.0, double area = 0.05, double r = 2.0, double lo = 5.0,
                          double hi = 30.0, double ambient = 10.0) {
  chp::HeatPipe p;
  p.id = id;
  p.from = from;
  p.to = to;
  p.side = side;
  p.length = length;
  p.area = area;
  p.resistance = r;
  p.flow_min = flat(n, lo);
  p.flow_max = flat(n, hi);
  p.ambient = flat(n, ambient);
  return p;
}

inline chp::HeatNode source_node(const std::string& id) {
  chp::HeatNode k;
  k.id = id;
  k.kind = chp::NodeKind::source;
  k.exchanger_flow = chp::Interval{0.0, 1e3};
  return k;
}

inline chp::HeatNode load_node(const std::string& id, const VectorXd& demand) {
  chp::HeatNode k;
  k.id = id;
  k.kind = chp::NodeKind::load;
  k.demand = demand;
  k.exchanger_flow = chp::Interval{0.5, 1e3};
  return k;
}

// Box region pmin <= p <= pmax, hmin <= h <= hmax with constant costs.
inline chp::EnergySource box_source(const std::string& id, const std::string& bus, const std::string& node, int n,
                                    double pmin, double pmax, double hmin, double hmax,
                                    const Eigen::Matrix<double, 6, 1>& eta) {
  chp::EnergySource s;
  s.id = id;
  s.kind = node.empty() ? "thermal" : (bus.empty() ? "gas_boiler" : "chp");
  s.bus = bus;
  s.heat_node = node;
  s.polytope = {{1.0, 0.0, flat(n, pmax)}, {-1.0, 0.0, flat(n, -pmin)}, {0.0, 1.0, flat(n, hmax)},
                {0.0, -1.0, flat(n, -hmin)}};
  s.eta = eta.replicate(1, n);
  return s;
}

inline Eigen::Matrix<double, 6, 1> eta(double e1, double e2, double e3 = 0.0, double e4 = 0.0, double e5 = 0.0) {
  Eigen::Matrix<double, 6, 1> e;
  e << 0.0, e1, e2, e3, e4, e5;
  return e;
}

inline void steady_start(DispatchInstance& in, double flow, double supply_temp) {
  VectorXd temps = VectorXd::Zero(static_cast<Eigen::Index>(in.heat.node_count()));
  for (std::size_t k = 0; k < in.heat.node_count(); ++k)
    if (in.heat.nodes[k].kind == chp::NodeKind::source) temps[static_cast<Eigen::Index>(k)] = supply_temp;
  in.initial_profiles =
      chp::steady_state_profiles(in, VectorXd::Constant(static_cast<Eigen::Index>(in.heat.pipe_count()), flow), temps);
}

/// One source node S feeding one load node L; a CHP and a grid tie on one bus.
inline DispatchInstance two_node(int n = 4, double dt = 3600.0) {
  using chp::NetworkSide;
  DispatchInstance in;
  in.name = "two_node";
  in.periods = n;
  in.dt = dt;
  in.dx = 100.0;
  VectorXd demand(n);
  for (int t = 0; t < n; ++t) demand[t] = 1.5e6 + 0.3e6 * std::sin(0.9 * t);
  in.heat.nodes = {source_node("S"), load_node("L", demand)};
  in.heat.nodes[0].supply_temp = chp::Interval{60.0, 120.0};
  in.heat.nodes[1].return_temp = chp::Interval{20.0, 80.0};
  in.heat.supply_pipes = {pipe("P1", "S", "L", NetworkSide::supply, n)};
  in.heat.return_pipes = {pipe("R1", "L", "S", NetworkSide::ret, n)};
  in.electric.buses = {{"b1", flat(n, 3e6)}};
  in.sources = {box_source("chp", "b1", "S", n, 0.0, 5e6, 0.0, 4e6, eta(2e-5, 1e-12, 1e-5, 1e-12)),
                box_source("grid", "b1", "", n, -10e6, 10e6, 0.0, 0.0, eta(4e-5, 2e-12))};
  for (int t = 0; t < n; ++t) in.sources[1].eta(1, t) = 3e-5 + 2e-5 * (t % 2);
  steady_start(in, 15.0, 90.0);
  return in;
}

/// Source node 1 feeding loads 2 and 3 through separate pipes.
inline DispatchInstance three_node(int n = 4, double dt = 3600.0) {
  using chp::NetworkSide;
  DispatchInstance in;
  in.name = "three_node";
  in.periods = n;
  in.dt = dt;
  in.dx = 100.0;
  VectorXd d2(n), d3(n);
  for (int t = 0; t < n; ++t) {
    d2[t] = 1.0e6 + 0.2e6 * t;
    d3[t] = 0.8e6 - 0.1e6 * t;
  }
  in.heat.nodes = {source_node("1"), load_node("2", d2), load_node("3", d3)};
  in.heat.nodes[0].supply_temp = chp::Interval{70.0, 95.0};
  in.heat.supply_pipes = {pipe("S12", "1", "2", NetworkSide::supply, n, 400.0),
                          pipe("S13", "1", "3", NetworkSide::supply, n, 250.0)};
  in.heat.return_pipes = {pipe("R21", "2", "1", NetworkSide::ret, n, 400.0),
                          pipe("R31", "3", "1", NetworkSide::ret, n, 250.0)};
  in.electric.buses = {{"b1", flat(n, 2e6)}, {"b2", flat(n, 1e6)}};
  chp::Line line;
  line.id = "L12";
  line.from = "b1";
  line.to = "b2";
  line.reactance = 0.1;
  line.limit = flat(n, 50e6);
  in.electric.lines = {line};
  in.sources = {box_source("chp", "b1", "1", n, 0.0, 5e6, 0.0, 5e6, eta(2e-5, 2e-12, 1.2e-5, 3e-12, 1e-12)),
                box_source("grid", "b2", "", n, -10e6, 10e6, 0.0, 0.0, eta(4e-5, 3e-12))};
  for (int t = 0; t < n; ++t) {
    in.sources[1].eta(1, t) = 2.5e-5 + 1.5e-5 * (t % 2);
    in.sources[0].eta(3, t) = 0.8e-5 + 0.8e-5 * (t % 2);
  }
  steady_start(in, 12.0, 85.0);
  return in;
}

}  // namespace fixtures
