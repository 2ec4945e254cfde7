// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "chp/harness.hpp"
#include "chp/io.hpp"
#include "chp/master.hpp"
#include "chp/subproblem.hpp"
#include "chp/thermal_dynamics.hpp"
#include "fixtures.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

using namespace chp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const std::filesystem::path data_dir = CHP_DATA_DIR;
constexpr double kRho = 1000.0, kCp = 4182.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Results shared between criteria so the long solves run once.
struct Runs {
  std::map<std::string, DispatchInstance> instances;
  std::map<std::string, DispatchResult> variable;
  std::map<std::string, double> variable_seconds;
  std::map<std::string, ComparisonReport> comparisons;
};

FlowSchedule uniform(const DispatchInstance& in, double v) {
  FlowSchedule m(static_cast<Eigen::Index>(in.heat.pipe_count()), in.periods);
  m.matrix().setConstant(v);
  return m;
}

// Outlet excess over ambient after a long run at constant inlet, relative to the
// closed-form steady solution of m cp dT/dx = -(T - Ta)/R.
double steady_outlet_error(int segments) {
  const double length = 2000.0, m = 2.0, r = 0.5, ambient = 10.0, inlet = 90.0;
  const int n = 400;
  auto p = fixtures::pipe("P", "a", "b", NetworkSide::supply, n, length, 0.05, r, 0.0, 10.0, ambient);
  const MatrixXd tau = simulate_pipe(p, 3600.0, length / segments, kRho, kCp, fixtures::flat(n, m),
                                     fixtures::flat(n, inlet), fixtures::flat(segments + 1, ambient));
  const double exact = ambient + (inlet - ambient) * std::exp(-length / (m * kCp * r));
  return std::abs(tau(segments, n) - exact) / std::abs(exact);
}

Outcome ac1() {
  const double e50 = steady_outlet_error(50);
  bool monotone = true;
  double prev = steady_outlet_error(25);
  for (int s : {50, 100, 200, 400}) {
    const double e = steady_outlet_error(s);
    monotone = monotone && e < prev;
    prev = e;
  }
  return {e50 <= 0.01 && monotone, "relative error " + fmt("%.3e", e50) + " at 50 segments, " +
                                       (monotone ? "decreasing" : "NOT decreasing") + " under dx halving"};
}

Outcome ac2() {
  const int n = 200;
  auto lossless = fixtures::pipe("P", "a", "b", NetworkSide::supply, n, 300.0, 0.05, 1e300, 0.0, 10.0, 10.0);
  const MatrixXd tau = simulate_pipe(lossless, 3600.0, 100.0, kRho, kCp, fixtures::flat(n, 4.0),
                                     fixtures::flat(n, 90.0), fixtures::flat(4, 40.0));
  const double drift = std::abs(tau(3, n) - 90.0);

  // Every boundary at ambient, varying flows: nothing may move.
  auto lossy = fixtures::pipe("P", "a", "b", NetworkSide::supply, n, 700.0, 0.05, 0.7, 0.0, 10.0, 12.5);
  VectorXd flows(n);
  for (int t = 0; t < n; ++t) flows[t] = 1.0 + 0.5 * (t % 7);
  const MatrixXd amb = simulate_pipe(lossy, 900.0, 50.0, kRho, kCp, flows, fixtures::flat(n, 12.5),
                                     fixtures::flat(15, 12.5));
  const bool fixed_point = (amb.array() == 12.5).all();
  return {drift <= 1e-9 && fixed_point,
          "lossless outlet drift " + fmt("%.2e", drift) + " degC, ambient fixed point " + (fixed_point ? "exact" : "broken")};
}

Outcome ac3() {
  const auto in = fixtures::three_node(4);
  const FlowSchedule m = uniform(in, 12.0);
  const auto r = evaluate_flow(in, m);
  if (r.status != SubproblemStatus::optimal) return {false, "sub-problem at the base point did not solve"};
  const double scale = r.gradient.cwiseAbs().maxCoeff();
  double worst = 0.0;
  for (Eigen::Index j = 0; j < m.pipes(); ++j)
    for (Eigen::Index t = 0; t < m.periods(); ++t) {
      const double h = 1e-4 * m(j, t);
      FlowSchedule a = m, b = m;
      a(j, t) += h;
      b(j, t) -= h;
      const auto ra = evaluate_flow(in, a), rb = evaluate_flow(in, b);
      if (ra.status != SubproblemStatus::optimal || rb.status != SubproblemStatus::optimal)
        return {false, "probe sub-problem did not solve"};
      const double fd = (ra.objective - rb.objective) / (2.0 * h);
      // Components that vanish are compared against the largest one.
      const double denom = std::max(std::abs(fd), 1e-6 * scale);
      worst = std::max(worst, std::abs(r.gradient(j, t) - fd) / denom);
    }
  return {scale > 0.0 && worst <= 1e-3,
          "max componentwise relative error " + fmt("%.2e", worst) + " over 16 flows, |g|max " + fmt("%.3g", scale)};
}

// Flow-starved network: the load cannot draw its heat at this flow.
Outcome ac4() {
  auto in = fixtures::two_node(3);
  const FlowSchedule m = uniform(in, 5.0);
  const auto r = evaluate_flow(in, m);
  if (r.status != SubproblemStatus::infeasible || r.cuts.size() != 1) return {false, "no cut at the starved flow"};
  const auto rel = build_relaxed_subproblem(in, m);
  const auto rr = solve_subproblem(rel);
  if (rr.status != SubproblemStatus::optimal) return {false, "relaxed program did not solve"};
  const Eigen::Index slacks = static_cast<Eigen::Index>(rel.rows.inequalities.size());
  const double sum_s = kPowerScale * rr.x.tail(slacks).sum();
  const double value = r.cuts.front().value(m.flat());
  const double rel_err = std::abs(value - sum_s) / std::abs(sum_s);
  return {value > 0.0 && rel_err <= 1e-6,
          "cut value " + fmt("%.9g", value) + " vs relaxed optimum " + fmt("%.9g", sum_s) + ", relative gap " +
              fmt("%.1e", rel_err)};
}

Outcome ac5() {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> dim(2, 20);
  std::normal_distribution<double> gauss;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = dim(rng);
    const int k = std::uniform_int_distribution<int>(0, n)(rng);
    MatrixXd h(n, k);
    for (int c = 0; c < k; ++c) {
      const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
      if (kind == 0) h.col(c) = VectorXd::Unit(n, std::uniform_int_distribution<int>(0, n - 1)(rng));  // bound
      else if (kind == 1 || c == 0) h.col(c) = VectorXd::NullaryExpr(n, [&] { return gauss(rng); }).normalized();
      else h.col(c) = h.col(c - 1) + h.col(0);  // dependent row
    }
    const MatrixXd p = projection_matrix(h);
    worst = std::max({worst, (p * p - p).cwiseAbs().maxCoeff(), (p - p.transpose()).cwiseAbs().maxCoeff(),
                      k > 0 ? (p * h).cwiseAbs().maxCoeff() : 0.0});
  }
  return {worst <= 1e-10, "worst of |P^2-P|, |P-P'|, |PH| over 100 configurations " + fmt("%.2e", worst)};
}

Outcome ac6(Runs& runs) {
  std::ostringstream os;
  bool pass = true;
  const SolverConfig cfg;
  for (const auto& [name, in] : runs.instances) {
    const auto& r = runs.variable.at(name);
    const double secs = runs.variable_seconds.at(name);
    bool ok = secs < 60.0;
    std::vector<double> accepted;
    for (const auto& rec : r.log)
      if (rec.status == "accepted") accepted.push_back(rec.objective);
    for (std::size_t i = 1; i < accepted.size(); ++i) ok = ok && accepted[i] <= accepted[i - 1];
    switch (r.termination) {
      case Termination::converged: ok = ok && check_convergence(accepted, cfg.delta).converged; break;
      case Termination::infeasible_limit: {
        const auto n = r.log.size();
        ok = ok && n >= 3;
        for (std::size_t i = n - std::min<std::size_t>(n, 3); i < n; ++i) ok = ok && r.log[i].status == "infeasible";
        break;
      }
      case Termination::max_iterations: ok = ok && r.iterations == cfg.max_iterations; break;
      case Termination::stationary: break;
      default: ok = false;
    }
    pass = pass && ok;
    os << name << ": " << to_string(r.termination) << " after " << r.iterations << ", " << accepted.size()
       << " accepted, " << fmt("%.1f", secs) << " s" << (ok ? "" : " [bad]") << "; ";
  }
  std::string s = os.str();
  return {pass, s.substr(0, s.size() - 2)};
}

Outcome ac7(Runs& runs) {
  const auto& rep = runs.comparisons.at("six_node");
  const auto& deg = runs.comparisons.at("six_node_degenerate");
  if (rep.modes.size() != 3 || deg.modes.size() != 3) return {false, "comparison incomplete"};
  for (const auto& m : rep.modes)
    if (!m.feasible) return {false, m.mode + " infeasible on six_node"};
  const double v = rep.modes[0].cost, f = rep.modes[1].cost, s = rep.modes[2].cost;
  const double g1 = (f - v) / f, g2 = (s - f) / s;
  const double dv = deg.modes[0].cost, df = deg.modes[1].cost;
  const double d = std::abs(dv - df) / std::abs(df);
  const bool pass = deg.modes[0].feasible && deg.modes[1].feasible && v <= f && f <= s && g1 > 0.005 &&
                    g2 > 0.005 && d <= 1e-6;
  return {pass, "variable " + fmt("%.2f", v) + " < fixed " + fmt("%.2f", f) + " (" + fmt("%.2f", 100 * g1) +
                    "%) < separate " + fmt("%.2f", s) + " (" + fmt("%.2f", 100 * g2) + "%); degenerate gap " +
                    fmt("%.1e", d)};
}

Outcome ac8(Runs& runs) {
  double worst = 0.0;
  int checked = 0;
  std::string where;
  auto check = [&](const DispatchInstance& in, const DispatchResult& r, const std::string& label) {
    if (!r.feasible) return;
    const double w = verify_solution(in, r).worst();
    ++checked;
    if (w >= worst) worst = w, where = label;
  };
  for (const auto& [name, in] : runs.instances) {
    check(in, runs.variable.at(name), name + "/variable");
    if (auto it = runs.comparisons.find(name); it != runs.comparisons.end())
      for (const auto& r : it->second.results) check(in, r, name + "/" + r.mode);
    else {
      const SolverConfig cfg;
      check(in, fixed_flow_dispatch(in, initial_flow(in, cfg)), name + "/fixed");
      check(in, separate_dispatch(in), name + "/separate");
    }
  }
  return {checked > 0 && worst <= 1e-6,
          std::to_string(checked) + " feasible results, max violation " + fmt("%.2e", worst) + " (" + where + ")"};
}

Outcome ac9(Runs& runs) {
  const auto& r = runs.variable.at("six_node_96");
  const double secs = runs.variable_seconds.at("six_node_96");
  return {r.feasible && secs < 60.0, "96-period variable solve " + fmt("%.1f", secs) + " s, " +
                                         to_string(r.termination) + ", cost " + fmt("%.2f", r.objective)};
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  int failures = 0;
  auto report = [&](const char* id, const std::function<Outcome()>& f) {
    const auto start = clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - start).count();
    failures += o.pass ? 0 : 1;
    std::printf("%s %s  %s (%.2f s)\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report("AC1", ac1);
  report("AC2", ac2);
  report("AC3", ac3);
  report("AC4", ac4);
  report("AC5", ac5);

  Runs runs;
  for (const char* name : {"six_node", "six_node_degenerate", "six_node_96"}) {
    try {
      runs.instances.emplace(name, load_instance(data_dir / (std::string(name) + ".json")));
    } catch (const std::exception& e) {
      std::printf("cannot load %s: %s\n", name, e.what());
      return 1;
    }
  }
  for (const auto& [name, in] : runs.instances) {
    const auto start = clock::now();
    runs.variable.emplace(name, dispatch(in));
    runs.variable_seconds[name] = std::chrono::duration<double>(clock::now() - start).count();
  }
  for (const char* name : {"six_node", "six_node_degenerate"})
    runs.comparisons.emplace(name, compare_modes(runs.instances.at(name)));

  report("AC6", [&] { return ac6(runs); });
  report("AC7", [&] { return ac7(runs); });
  report("AC8", [&] { return ac8(runs); });
  report("AC9", [&] { return ac9(runs); });
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
