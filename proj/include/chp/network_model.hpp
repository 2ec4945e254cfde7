#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace chp {

/// Raised for malformed inputs that violate a documented precondition.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NetworkSide { supply, ret };
enum class NodeKind { source, load };

/// Closed interval [lo, hi]; used for optional temperature and exchanger flow boxes.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct HeatPipe {
  std::string id;
  std::string from;
  std::string to;
  NetworkSide side = NetworkSide::supply;
  double length = 0.0;  // m
  double area = 0.0;    // m^2
  double resistance = 0.0;  // thermal conductive coefficient R, m*K/W
  Eigen::VectorXd flow_min;  // kg/s, one per period
  Eigen::VectorXd flow_max;  // kg/s, one per period
  Eigen::VectorXd ambient;   // degC, one per period
  std::optional<double> dx;  // per-pipe segment length override
};

struct HeatNode {
  std::string id;
  NodeKind kind = NodeKind::load;
  Eigen::VectorXd demand;  // W per period, loads only (empty for sources)
  std::optional<Interval> exchanger_flow;  // kg/s
  std::optional<Interval> supply_temp;     // degC
  std::optional<Interval> return_temp;     // degC
};

/// Supply and return pipe graphs over a shared node set.
struct HeatNetwork {
  std::vector<HeatNode> nodes;
  std::vector<HeatPipe> supply_pipes;
  std::vector<HeatPipe> return_pipes;

  std::size_t node_count() const { return nodes.size(); }
  std::size_t pipe_count() const { return supply_pipes.size() + return_pipes.size(); }
  /// Pipes in flow-schedule order: supply pipes first, then return pipes.
  const HeatPipe& pipe(std::size_t j) const;
  int node_index(const std::string& id) const;  // -1 when absent
  int pipe_index(const std::string& id) const;  // -1 when absent

  /// Node x pipe incidence of one side: +1 if the pipe enters the node, -1 if it leaves.
  Eigen::MatrixXd incidence(NetworkSide side) const;
};

struct Bus {
  std::string id;
  Eigen::VectorXd demand;  // W per period
};

struct Line {
  std::string id;
  std::string from;
  std::string to;
  double reactance = 0.0;
  Eigen::VectorXd limit;  // W per period
  std::optional<Eigen::VectorXd> shift_factors;  // one entry per bus when given
};

struct ElectricNetwork {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::string slack_bus;  // first bus when empty

  int bus_index(const std::string& id) const;
};

/// One boundary row B*p + K*h <= v of a source operating region.
struct PolytopeRow {
  double B = 0.0;
  double K = 0.0;
  Eigen::VectorXd v;  // one per period
};

/// Ramp rates in W/s. Downward limits are signed (normally negative).
struct RampLimits {
  double down_e = -1e300;
  double up_e = 1e300;
  double down_h = -1e300;
  double up_h = 1e300;
};

struct Renewable {
  Eigen::VectorXd available;  // W per period
  double curtailment_penalty = 0.0;  // $ per Wh curtailed
};

struct EnergySource {
  std::string id;
  std::string kind;  // free-form tag: chp, thermal, gas_boiler, electric_boiler, wind, grid
  std::string bus;        // empty when not electric
  std::string heat_node;  // empty when not thermal
  std::vector<PolytopeRow> polytope;
  RampLimits ramp;
  /// Cost coefficients, 6 x N: rows eta0..eta5 of
  /// eta0 + eta1 p + eta2 p^2 + eta3 h + eta4 h^2 + eta5 p h (per period, $).
  Eigen::MatrixXd eta;
  std::optional<Renewable> renewable;

  /// Polytope rows plus p <= available for renewable sources.
  std::vector<PolytopeRow> operating_rows() const;
};

/// Immutable problem description shared by every solver mode.
struct DispatchInstance {
  std::string name;
  HeatNetwork heat;
  ElectricNetwork electric;
  std::vector<EnergySource> sources;
  int periods = 0;      // N
  double dt = 0.0;      // s
  double dx = 0.0;      // m
  double rho = 1000.0;  // kg/m^3
  double cp = 4182.0;   // J/(kg K)
  /// Initial pipe profiles tau_j(i, 0), i = 0..S_j, in flow-schedule pipe order.
  std::vector<Eigen::VectorXd> initial_profiles;

  double pipe_dx(std::size_t j) const;
  int segments(std::size_t j) const;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate(const DispatchInstance& instance);

/// Ceil(length / dx), at least one.
int segment_count(const HeatPipe& pipe, double dx);

/// A * m_t for a node x pipe incidence matrix.
Eigen::VectorXd node_mass_flow(const Eigen::MatrixXd& incidence, const Eigen::Ref<const Eigen::VectorXd>& flows);

/// Lines x buses DC power-transfer distribution factors.
/// Uses explicit rows when every line carries them, otherwise derives from reactances.
Eigen::MatrixXd shift_factors(const ElectricNetwork& network);

/// Exchanger mass flow m^n at every node for one period, from supply-side flows.
/// Loads take inflow minus outflow; sources take outflow minus inflow.
Eigen::VectorXd exchanger_flows(const HeatNetwork& heat, const Eigen::Ref<const Eigen::VectorXd>& supply_flows);

}  // namespace chp
