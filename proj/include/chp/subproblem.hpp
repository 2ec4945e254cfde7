#pragma once

#include "chp/flow_schedule.hpp"
#include "chp/network_model.hpp"
#include "chp/qp.hpp"
#include "chp/thermal_dynamics.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace chp {

/// Power quantities are carried in MW inside the programs.
inline constexpr double kPowerScale = 1e6;

/// Column layout of the decision vector x. Periods are outer; inside a period the
/// order is p, h, l, exchanger supply/return, node supply/return, supply inlets,
/// supply outlets, return inlets, return outlets, supply segments, return segments.
class VariableLayout {
 public:
  VariableLayout() = default;
  explicit VariableLayout(const DispatchInstance& instance);

  Eigen::Index p(std::size_t source, int t) const { return base(t) + idx(source); }
  Eigen::Index h(std::size_t source, int t) const { return base(t) + ns_ + idx(source); }
  Eigen::Index line(std::size_t l, int t) const { return base(t) + 2 * ns_ + idx(l); }
  Eigen::Index exchanger_supply(std::size_t k, int t) const { return base(t) + node_off_ + idx(k); }
  Eigen::Index exchanger_return(std::size_t k, int t) const { return base(t) + node_off_ + nn_ + idx(k); }
  Eigen::Index node_supply(std::size_t k, int t) const { return base(t) + node_off_ + 2 * nn_ + idx(k); }
  Eigen::Index node_return(std::size_t k, int t) const { return base(t) + node_off_ + 3 * nn_ + idx(k); }
  /// Pipe j in flow-schedule order.
  Eigen::Index inlet(std::size_t j, int t) const;
  Eigen::Index outlet(std::size_t j, int t) const;
  Eigen::Index segment(std::size_t j, int i, int t) const { return base(t) + seg_off_[j] + i; }

  Eigen::Index per_period() const { return per_period_; }
  Eigen::Index size() const { return per_period_ * periods_; }
  int periods() const { return periods_; }
  std::string name(Eigen::Index var) const;

 private:
  static Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }
  Eigen::Index base(int t) const { return per_period_ * t; }

  Eigen::Index ns_ = 0, nl_ = 0, nn_ = 0, nps_ = 0, npr_ = 0;
  Eigen::Index node_off_ = 0, pipe_off_ = 0, per_period_ = 0;
  int periods_ = 0;
  std::vector<Eigen::Index> seg_off_;
  std::vector<int> seg_count_;
  std::vector<std::string> source_ids_, line_ids_, node_ids_, pipe_ids_;
};

/// h1: flow-dependent equalities; h2: flow-independent equalities; g1: inequalities.
enum class Block { h1, h2, g1 };

enum class RowKind {
  supply_mixing,
  return_mixing,
  node_heat,
  supply_pipe,
  return_pipe,
  supply_inlet,
  return_inlet,
  power_balance,
  line_flow,
  identity,  // segment boundaries, node/exchanger identities, structural pins
  line_limit,
  heat_adequacy,
  operating_region,
  electric_ramp,
  heat_ramp,
  temperature_bound,
};

/// Provenance of one program row.
struct RowInfo {
  Block block = Block::h2;
  RowKind kind = RowKind::identity;
  int period = 0;  // 0-based; -1 for rows spanning the horizon
  std::string label;
};

/// Derivative of one constraint coefficient with respect to one pipe flow:
/// d A(row, var) / d m_flow = value.
struct FlowDerivative {
  Eigen::Index row = 0;
  Eigen::Index var = 0;
  Eigen::Index flow = 0;  // flattened FlowSchedule index
  double value = 0.0;
};

/// Row provenance for every equality (h1 and h2 interleaved in build order) and
/// every inequality (g1) of a program.
struct ConstraintBlocks {
  std::vector<RowInfo> equalities;
  std::vector<RowInfo> inequalities;

  std::size_t count(Block b) const;
  std::size_t count(Block b, RowKind kind) const;
};

struct SubproblemOptions {
  ThermalScheme scheme = ThermalScheme::implicit_upwind;
  QpSettings qp{};
  /// Relaxed optimum (natural units) above which m is declared infeasible.
  double infeasibility_threshold = 1e-2;
};

/// Convex program at fixed flow, with the bookkeeping needed for gradients and cuts.
struct Subproblem {
  QuadraticProgram program;
  VariableLayout layout;
  ConstraintBlocks rows;
  std::vector<FlowDerivative> derivatives;
  FlowSchedule flows;
  bool relaxed = false;  // one slack column per g1 row follows the layout columns
};

/// Primal values in natural units.
struct SystemState {
  Eigen::MatrixXd p;  // sources x N, W
  Eigen::MatrixXd h;  // sources x N, W
  Eigen::MatrixXd line_flow;  // lines x N, W
  Eigen::MatrixXd exchanger_supply, exchanger_return, node_supply, node_return;  // nodes x N, degC
  Eigen::MatrixXd pipe_inlet, pipe_outlet;  // pipes x N, degC
  std::vector<Eigen::MatrixXd> pipe_temps;  // (S_j + 1) x (N + 1), column 0 initial

  /// Source exchanger supply temperatures (nodes x N) for the forward simulator.
  Eigen::MatrixXd source_temps() const { return exchanger_supply; }
};

enum class SubproblemStatus { optimal, infeasible, failed };

struct CutPlane {
  Eigen::VectorXd normal;  // flattened flow index
  double bound = 0.0;      // normal' m <= bound
  Eigen::VectorXd origin;  // m_k that generated it
  double violation = 0.0;  // value at origin, equals the relaxed optimum

  double value(const Eigen::VectorXd& m) const { return normal.dot(m) - bound; }
};

struct SubproblemResult {
  SubproblemStatus status = SubproblemStatus::failed;
  double objective = 0.0;  // $
  SystemState state;
  Eigen::VectorXd x;
  Eigen::VectorXd eq_duals;    // y, one per equality row
  Eigen::VectorXd ineq_duals;  // z >= 0, one per g1 row
  Eigen::MatrixXd gradient;    // pipes x N, filled when optimal
  double relaxed_objective = 0.0;  // kPowerScale * sum of slacks, when relaxed or infeasible
  std::vector<CutPlane> cuts;      // at most one, when infeasible
  int qp_iterations = 0;
  bool polished = false;
};

/// Bounds and shape checks on m before building.
void check_flow_schedule(const DispatchInstance& instance, const FlowSchedule& m);

Subproblem build_subproblem(const DispatchInstance& instance, const FlowSchedule& m,
                            const SubproblemOptions& options = {});

/// g1 rows become g1(x) <= s with s >= 0 and objective sum s. Slacks are in program
/// units (MW or degC), each weighted alike; reported optima are scaled by kPowerScale
/// so a power violation reads in W.
Subproblem build_relaxed_subproblem(const DispatchInstance& instance, const FlowSchedule& m,
                                    const SubproblemOptions& options = {});

/// Solves one program; status is optimal or failed (no relaxed fallback).
SubproblemResult solve_subproblem(const Subproblem& sub, const SubproblemOptions& options = {});

/// d J* / d m from the equality duals (pipes x N).
Eigen::MatrixXd envelope_gradient(const Subproblem& sub, const SubproblemResult& result);

/// Outer-approximation cut from a solved relaxed program. Throws when nothing is violated.
CutPlane generate_cut(const Subproblem& relaxed, const SubproblemResult& relaxed_result);

/// Builds and solves at m; on failure solves the relaxed program and, when the
/// violation exceeds the threshold, reports infeasible with a cut.
SubproblemResult evaluate_flow(const DispatchInstance& instance, const FlowSchedule& m,
                               const SubproblemOptions& options = {});

/// Cost coefficients of one source and period including the curtailment penalty,
/// which adds pen*(available - p)*dt/3600 for renewable sources.
Eigen::Matrix<double, 6, 1> effective_cost(const EnergySource& source, int t, double dt);

/// Maps a primal vector to natural units.
SystemState extract_state(const DispatchInstance& instance, const VariableLayout& layout, const Eigen::VectorXd& x);

}  // namespace chp
