#pragma once

#include "chp/flow_schedule.hpp"
#include "chp/network_model.hpp"
#include "chp/subproblem.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace chp {

/// Admissible flows M (box bounds, supply/return consistency, exchanger flow bounds)
/// together with the accumulated feasibility cuts. All vectors use the flattened
/// FlowSchedule index.
struct FlowSet {
  Eigen::VectorXd lower, upper;
  Eigen::MatrixXd equalities;    // E m = 0, unit rows
  Eigen::MatrixXd inequalities;  // G m <= g, unit rows
  Eigen::VectorXd rhs;
  std::vector<CutPlane> cuts;
  Eigen::Index pipes = 0;  // per period; 0 means a single block

  Eigen::Index size() const { return lower.size(); }
  /// Largest violation over every constraint (0 when m is admissible).
  double violation(const Eigen::VectorXd& m) const;
};

FlowSet flow_set(const DispatchInstance& instance);

/// Closest admissible point in the Euclidean norm. Throws InputError when M is empty.
Eigen::VectorXd project_onto(const FlowSet& set, const Eigen::VectorXd& m);

/// Indices of constraints whose residual is within 1e-8 (1 + |bound|) at m. Violated
/// constraints count as active.
struct ActiveSet {
  std::vector<Eigen::Index> lower, upper, rows, cuts;
  std::size_t size() const { return lower.size() + upper.size() + rows.size() + cuts.size(); }
};
ActiveSet active_constraints(const FlowSet& set, const Eigen::VectorXd& m, double tol = 1e-8);

/// P = I - H (H'H)^-1 H' with linearly dependent columns of H dropped.
Eigen::MatrixXd projection_matrix(const Eigen::MatrixXd& active_normals);

/// Projected gradient at m. Active inequalities whose multiplier has the wrong sign are
/// released until every remaining one holds the iterate back.
struct ProjectedGradient {
  Eigen::VectorXd direction;  // P g
  ActiveSet active;           // after releases
};
ProjectedGradient projected_gradient(const FlowSet& set, const Eigen::VectorXd& m, const Eigen::VectorXd& g);

/// Step length so that the linear model drops by gamma |J|. Empty when Pg vanishes.
/// `negated` uses the denominator (-Pg)'g instead, which flips the sign.
std::optional<double> step_size(double objective, const Eigen::VectorXd& g, const Eigen::VectorXd& pg, double gamma,
                                bool negated = false);

/// Largest t in [0, 1] keeping m + t d inside M and every cut.
double ray_limit(const FlowSet& set, const Eigen::VectorXd& m, const Eigen::VectorXd& d);

/// m - alpha Pg clipped to the first bound or cut it meets; lands exactly on bounds.
Eigen::VectorXd update_flow(const FlowSet& set, const Eigen::VectorXd& m, const Eigen::VectorXd& pg, double alpha);

struct Revision {
  Eigen::VectorXd m;
  double beta = 0.0;
  bool fallback = false;
};

/// Point where the descent ray from the last feasible iterate meets the cut.
Revision revise_flow(const FlowSet& set, const Eigen::VectorXd& m_r, const CutPlane& cut,
                     const Eigen::VectorXd& direction);

struct ConvergenceCheck {
  bool converged = false;
  double sigma = 0.0;
};

/// sigma = |(J_k - J_{k-1}) / J_1| over accepted objectives.
ConvergenceCheck check_convergence(const std::vector<double>& history, double delta);

enum class InitialFlow { midpoint, nominal, given };

struct SolverConfig {
  double gamma = 0.3;
  double delta = 1e-4;
  int max_iterations = 60;   // sub-problem evaluations
  int infeasible_stop = 3;
  double backtrack = 0.5;
  int max_backtracks = 5;
  InitialFlow initial = InitialFlow::midpoint;
  std::optional<FlowSchedule> initial_flow;  // for InitialFlow::given
  bool negated_stepsize = false;
  SubproblemOptions subproblem{};
  std::string dump_lp_dir;  // one program file per evaluation when set
};

enum class Termination { converged, stationary, max_iterations, infeasible_limit, no_feasible, single_solve };

std::string to_string(Termination t);

struct IterationRecord {
  int k = 0;
  std::string status;  // accepted, rejected, infeasible
  double objective = 0.0;
  double sigma = 0.0;
  double alpha = 0.0;
  std::size_t cuts = 0;
  double grad_norm = 0.0;
  double wallclock_ms = 0.0;
};

struct DispatchResult {
  std::string mode;
  bool feasible = false;
  Termination termination = Termination::no_feasible;
  double objective = 0.0;  // $
  FlowSchedule flows;      // empty for the separate mode
  SystemState state;
  std::vector<IterationRecord> log;
  std::vector<CutPlane> cuts;
  int iterations = 0;
  double relaxed_objective = 0.0;  // diagnosis when infeasible
  double wallclock_s = 0.0;
};

/// Starting schedule for a policy, projected onto M.
FlowSchedule initial_flow(const DispatchInstance& instance, const SolverConfig& config);

/// Variable-flow dispatch: projected-gradient search over m with feasibility cuts.
DispatchResult dispatch(const DispatchInstance& instance, const SolverConfig& config = {});

void write_iteration_log(std::ostream& os, const std::vector<IterationRecord>& log);

}  // namespace chp
