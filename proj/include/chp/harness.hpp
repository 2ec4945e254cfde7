#pragma once

#include "chp/master.hpp"

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace chp {

/// One sub-problem solve at a given flow schedule; no search over m.
DispatchResult fixed_flow_dispatch(const DispatchInstance& instance, const FlowSchedule& flows,
                                   const SubproblemOptions& options = {});

/// Heat first, per-period balance with no network; then electricity at that heat schedule.
DispatchResult separate_dispatch(const DispatchInstance& instance, const QpSettings& settings = {});

/// Operating cost of power and heat schedules (sources x N, W), curtailment penalty included.
double schedule_cost(const DispatchInstance& instance, const Eigen::MatrixXd& p, const Eigen::MatrixXd& h);

/// Curtailed renewable energy (Wh) and its share of the available energy (%).
std::pair<double, double> curtailment(const DispatchInstance& instance, const Eigen::MatrixXd& p);

struct ModeSummary {
  std::string mode;
  bool feasible = false;
  std::string status;
  double cost = 0.0;
  double curtailment_wh = 0.0;
  double curtailment_pct = 0.0;
  double wallclock_s = 0.0;
  int iterations = 0;
};

struct ComparisonReport {
  std::vector<ModeSummary> modes;      // variable, fixed, separate
  std::vector<DispatchResult> results;  // same order
  bool ordering_checked = false;
  bool ordering_holds = false;
  double fixed_over_variable = 0.0;  // relative cost gaps
  double separate_over_fixed = 0.0;
  std::vector<std::string> notes;
};

ComparisonReport compare_modes(const DispatchInstance& instance, const SolverConfig& config = {});

struct VerificationReport {
  std::vector<std::pair<std::string, double>> families;  // max violation, natural units
  Eigen::VectorXd storage_proxy;  // per period: heat generated minus heat demanded, W

  double worst() const;
  double violation(const std::string& family) const;
  bool passed(double tolerance = 1e-6) const { return worst() <= tolerance; }
};

/// Independent re-check of every constraint on a returned schedule. Results without
/// flows (separate mode) are checked against the per-period heat balance instead of
/// the network.
VerificationReport verify_solution(const DispatchInstance& instance, const DispatchResult& result,
                                   ThermalScheme scheme = ThermalScheme::implicit_upwind);

}  // namespace chp
