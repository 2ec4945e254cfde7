#pragma once

#include "chp/flow_schedule.hpp"
#include "chp/network_model.hpp"

#include <Eigen/Dense>

#include <vector>

namespace chp {

/// Left-hand factor of the implicit pipe update. `implicit_upwind` is (a + b m);
/// `swapped_factor` is (a m + b), kept for comparison runs.
enum class ThermalScheme { implicit_upwind, swapped_factor };

/// Per-pipe coefficients of the implicit upwind transport-with-loss scheme.
/// a = 1/dt + lambda, b = 1/(dx rho A), c = 1/dt, d = lambda * T_ambient,
/// with lambda = 1/(rho cp A R).
template <typename Scalar = double>
struct PipeCoefficients {
  Scalar a{};
  Scalar b{};
  Scalar c{};
  Scalar d{};
  Scalar ambient{};

  Scalar loss() const { return a - c; }
};

PipeCoefficients<double> pipe_coefficients(const HeatPipe& pipe, double dt, double dx, double rho, double cp,
                                           int period);

template <typename Scalar>
Scalar lhs_factor(const PipeCoefficients<Scalar>& k, const Scalar& m,
                  ThermalScheme scheme = ThermalScheme::implicit_upwind) {
  return scheme == ThermalScheme::implicit_upwind ? Scalar(k.a + k.b * m) : Scalar(k.a * m + k.b);
}

/// One implicit update tau(i, t) from tau(i, t-1) and tau(i-1, t).
template <typename Scalar>
Scalar step_segment(const PipeCoefficients<Scalar>& k, const Scalar& m, const Scalar& prev_time,
                    const Scalar& upstream, ThermalScheme scheme = ThermalScheme::implicit_upwind) {
  if (scheme == ThermalScheme::swapped_factor) return (k.c * prev_time + k.b * m * upstream + k.d) / lhs_factor(k, m, scheme);
  // Same update written as excess over ambient, so an ambient pipe stays there exactly.
  return k.ambient + (k.c * (prev_time - k.ambient) + k.b * m * (upstream - k.ambient)) / lhs_factor(k, m, scheme);
}

/// Flow-weighted mixing of entering pipe outlets and an exchanger stream.
/// Throws InputError when the total flow is not positive.
template <typename DerivedT, typename DerivedM>
typename DerivedT::Scalar mix_node(const Eigen::MatrixBase<DerivedT>& outlet_temps,
                                   const Eigen::MatrixBase<DerivedM>& flows,
                                   typename DerivedT::Scalar exchanger_flow,
                                   typename DerivedT::Scalar exchanger_temp) {
  using Scalar = typename DerivedT::Scalar;
  const Scalar total = flows.sum() + exchanger_flow;
  if (!(total > Scalar(0))) throw InputError("mix_node: no flow reaches the node");
  return (flows.dot(outlet_temps) + exchanger_flow * exchanger_temp) / total;
}

/// Forward sweep of one pipe. Returns (S_j + 1) x (N + 1) temperatures, column 0
/// holding the initial profile and row 0 the inlet series.
Eigen::MatrixXd simulate_pipe(const HeatPipe& pipe, double dt, double dx, double rho, double cp,
                              const Eigen::VectorXd& flows, const Eigen::VectorXd& inlet,
                              const Eigen::VectorXd& initial_profile,
                              ThermalScheme scheme = ThermalScheme::implicit_upwind);

/// Thermal part of a system state. Node quantities are nodes x N (column t-1 is period t).
struct ThermalState {
  std::vector<Eigen::MatrixXd> pipe_temps;  // flow-schedule pipe order
  Eigen::MatrixXd node_supply;
  Eigen::MatrixXd node_return;
  Eigen::MatrixXd exchanger_supply;
  Eigen::MatrixXd exchanger_return;
  Eigen::MatrixXd exchanger_flow;  // kg/s
  Eigen::MatrixXd node_heat;       // W: generation at sources, delivery at loads

  Eigen::VectorXd inlet(std::size_t pipe) const { return pipe_temps[pipe].row(0).tail(pipe_temps[pipe].cols() - 1); }
  Eigen::VectorXd outlet(std::size_t pipe) const {
    const auto& p = pipe_temps[pipe];
    return p.row(p.rows() - 1).tail(p.cols() - 1);
  }
};

/// Node temperature used when no water reaches a node in period 1.
double initial_node_temperature(const DispatchInstance& instance, std::size_t node, NetworkSide side);

/// Supply sweep from sources to loads, then return sweep back, period by period.
/// `source_supply_temps` is nodes x N; only source rows are read.
ThermalState simulate_network(const DispatchInstance& instance, const FlowSchedule& flows,
                              const Eigen::MatrixXd& source_supply_temps,
                              ThermalScheme scheme = ThermalScheme::implicit_upwind);

/// Steady profiles for constant per-pipe flows and source supply temperatures (indexed
/// by node) at first-period loads and ambient.
std::vector<Eigen::VectorXd> steady_state_profiles(const DispatchInstance& instance,
                                                   const Eigen::VectorXd& pipe_flows,
                                                   const Eigen::VectorXd& source_supply_temps);

/// Node orders such that every pipe's from-node precedes its to-node.
std::vector<std::size_t> topological_order(const HeatNetwork& heat, NetworkSide side);

}  // namespace chp
