// chp_dispatch: batch front end for the dispatch modes and the network simulator.
//
//   chp_dispatch variable --instance six_node.json --out runs/var
//   chp_dispatch run --mode compare --instance six_node.json
//
// Exit status: 0 feasible, 2 proven infeasible, 1 anything else (see error.json).

#include "chp/harness.hpp"
#include "chp/io.hpp"
#include "chp/master.hpp"
#include "chp/thermal_dynamics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kOutEnv = "CHP_DISPATCH_OUT";

struct RunConfig {
  std::string instance;
  std::string mode;
  double gamma = 0.3;
  double delta = 1e-4;
  int max_iter = 60;
  int infeasible_stop = 3;
  std::optional<double> dx;
  std::string out;
  std::string flows;         // fixed: schedule file; simulate: required
  std::string source_temps;  // simulate
  std::string policy = "midpoint";
  bool swapped_factor = false;
  bool negated_stepsize = false;
  std::string dump_lp;
  bool emit_plots = false;
};

// Raised for failures that are not the instance's fault (bad flags, solver breakdown).
struct RunError : std::runtime_error {
  std::string kind;
  RunError(std::string k, const std::string& msg) : std::runtime_error(msg), kind(std::move(k)) {}
};

enum Exit { kFeasible = 0, kError = 1, kInfeasible = 2 };

template <class F>
void write_file(const fs::path& path, F&& body) {
  std::ofstream f(path);
  if (!f) throw RunError("io_error", "cannot write " + path.string());
  body(f);
}

void write_json(const fs::path& path, const json& doc) {
  write_file(path, [&](std::ostream& os) { os << doc.dump(2) << '\n'; });
}

chp::ThermalScheme scheme_of(const RunConfig& cfg) {
  return cfg.swapped_factor ? chp::ThermalScheme::swapped_factor : chp::ThermalScheme::implicit_upwind;
}

chp::SolverConfig solver_config(const RunConfig& cfg, const chp::DispatchInstance& in) {
  chp::SolverConfig s;
  s.gamma = cfg.gamma;
  s.delta = cfg.delta;
  s.max_iterations = cfg.max_iter;
  s.infeasible_stop = cfg.infeasible_stop;
  s.negated_stepsize = cfg.negated_stepsize;
  s.dump_lp_dir = cfg.dump_lp;
  s.subproblem.scheme = scheme_of(cfg);
  if (cfg.policy == "nominal") s.initial = chp::InitialFlow::nominal;
  if (!cfg.flows.empty()) {
    s.initial = chp::InitialFlow::given;
    s.initial_flow = chp::read_flows_csv(cfg.flows, in);
  }
  return s;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Every artifact of one mode result goes to `dir`; returns the result.json body.
json emit_result(const RunConfig& cfg, const chp::DispatchInstance& in, const chp::DispatchResult& r,
                 const fs::path& dir) {
  fs::create_directories(dir);
  json doc;
  doc["instance"] = in.name;
  doc["mode"] = r.mode;
  doc["feasible"] = r.feasible;
  doc["status"] = chp::to_string(r.termination);
  doc["iterations"] = r.iterations;
  doc["wallclock_s"] = r.wallclock_s;
  doc["cuts"] = r.cuts.size();
  write_file(dir / "iterations.csv", [&](std::ostream& os) { chp::write_iteration_log(os, r.log); });
  if (!r.feasible) {
    doc["cost"] = nullptr;
    doc["relaxed_objective"] = number_or_null(r.relaxed_objective);
    write_json(dir / "result.json", doc);
    return doc;
  }

  doc["cost"] = r.objective;
  const auto [wh, pct] = chp::curtailment(in, r.state.p);
  doc["curtailment_Wh"] = wh;
  doc["curtailment_pct"] = pct;

  const auto ver = chp::verify_solution(in, r, scheme_of(cfg));
  json fam = json::object();
  for (const auto& [name, v] : ver.families) fam[name] = number_or_null(v);
  doc["verification"] = {{"max_violation", number_or_null(ver.worst())}, {"passed", ver.passed()}, {"families", fam}};

  write_file(dir / "schedules.csv", [&](std::ostream& os) { chp::write_schedules_csv(os, in, r.state); });
  write_file(dir / "storage_proxy.csv", [&](std::ostream& os) { chp::write_storage_proxy_csv(os, ver.storage_proxy); });
  if (r.flows.size() > 0) {
    write_file(dir / "flows.csv", [&](std::ostream& os) { chp::write_flows_csv(os, in, r.flows); });
    write_file(dir / "source_temps.csv",
               [&](std::ostream& os) { chp::write_source_temps_csv(os, in, r.state.source_temps()); });
    write_file(dir / "temperatures.csv", [&](std::ostream& os) { chp::write_temperatures_csv(os, in, r.state.pipe_temps); });
    const auto sim = chp::simulate_network(in, r.flows, r.state.source_temps(), scheme_of(cfg));
    write_file(dir / "delivered_heat.csv", [&](std::ostream& os) { chp::write_delivered_heat_csv(os, in, sim.node_heat); });
  }
  if (cfg.emit_plots) {
    write_file(dir / "generation_vs_load.csv",
               [&](std::ostream& os) { chp::write_generation_vs_load_csv(os, in, r.state); });
    write_file(dir / "grid_purchase.csv", [&](std::ostream& os) { chp::write_grid_purchase_csv(os, in, r.state); });
  }
  write_json(dir / "result.json", doc);
  return doc;
}

// Proven infeasible when some solve came back with an infeasibility certificate.
int exit_for(const chp::DispatchResult& r) {
  if (r.feasible) return kFeasible;
  for (const auto& rec : r.log)
    if (rec.status == "infeasible") return kInfeasible;
  throw RunError("solver_failure", r.mode + " mode: no solve reached optimality (" + chp::to_string(r.termination) + ")");
}

void report(const chp::DispatchResult& r) {
  std::cout << r.mode << ": " << chp::to_string(r.termination);
  if (r.feasible) std::cout << ", cost " << chp::format_number(r.objective);
  std::cout << ", " << r.iterations << " iteration(s), " << r.wallclock_s << " s\n";
}

int run_simulate(const RunConfig& cfg, const chp::DispatchInstance& in, const fs::path& out) {
  if (cfg.flows.empty() || cfg.source_temps.empty())
    throw RunError("usage_error", "simulate needs --flows and --source-temps");
  const auto flows = chp::read_flows_csv(cfg.flows, in);
  chp::check_flow_schedule(in, flows);
  const auto temps = chp::read_source_temps_csv(cfg.source_temps, in);
  const auto sim = chp::simulate_network(in, flows, temps, scheme_of(cfg));
  fs::create_directories(out);
  write_file(out / "temperatures.csv", [&](std::ostream& os) { chp::write_temperatures_csv(os, in, sim.pipe_temps); });
  write_file(out / "delivered_heat.csv", [&](std::ostream& os) { chp::write_delivered_heat_csv(os, in, sim.node_heat); });
  write_json(out / "result.json", {{"instance", in.name}, {"mode", "simulate"}, {"status", "simulated"}});
  std::cout << "simulate: " << in.heat.pipe_count() << " pipes, " << in.periods << " periods\n";
  return kFeasible;
}

int run_compare(const RunConfig& cfg, const chp::DispatchInstance& in, const fs::path& out) {
  const auto rep = chp::compare_modes(in, solver_config(cfg, in));
  fs::create_directories(out);
  json doc;
  doc["instance"] = in.name;
  doc["mode"] = "compare";
  json modes = json::array();
  bool all_feasible = true, any_certificate = false;
  for (const auto& r : rep.results) {
    report(r);
    modes.push_back(emit_result(cfg, in, r, out / r.mode));
    all_feasible = all_feasible && r.feasible;
    if (!r.feasible)
      for (const auto& rec : r.log) any_certificate = any_certificate || rec.status == "infeasible";
  }
  write_file(out / "comparison.csv", [&](std::ostream& os) { chp::write_comparison_csv(os, rep); });
  doc["modes"] = modes;
  doc["ordering_checked"] = rep.ordering_checked;
  doc["ordering_holds"] = rep.ordering_holds;
  doc["fixed_over_variable"] = rep.fixed_over_variable;
  doc["separate_over_fixed"] = rep.separate_over_fixed;
  doc["notes"] = rep.notes;
  doc["status"] = all_feasible ? "feasible" : "partial";
  write_json(out / "result.json", doc);
  for (const auto& n : rep.notes) std::cout << "note: " << n << '\n';
  if (all_feasible) return kFeasible;
  if (any_certificate) return kInfeasible;
  throw RunError("solver_failure", "compare: a mode failed without an infeasibility certificate");
}

int run(const RunConfig& cfg, const fs::path& out) {
  const auto in = chp::load_instance(cfg.instance, cfg.dx);
  std::cout << "instance " << in.name << ": " << in.heat.node_count() << " nodes, " << in.heat.pipe_count()
            << " pipes, " << in.sources.size() << " sources, " << in.periods << " periods\n";
  if (cfg.mode == "simulate") return run_simulate(cfg, in, out);
  if (cfg.mode == "compare") return run_compare(cfg, in, out);

  const auto scfg = solver_config(cfg, in);
  chp::DispatchResult r;
  if (cfg.mode == "variable") r = chp::dispatch(in, scfg);
  else if (cfg.mode == "fixed") r = chp::fixed_flow_dispatch(in, chp::initial_flow(in, scfg), scfg.subproblem);
  else r = chp::separate_dispatch(in, scfg.subproblem.qp);
  report(r);
  emit_result(cfg, in, r, out);
  return exit_for(r);
}

void add_options(CLI::App& app, RunConfig& cfg) {
  app.add_option("--instance", cfg.instance, "Instance JSON file")->required()->check(CLI::ExistingFile);
  app.add_option("--out", cfg.out, std::string("Output directory (default: $") + kOutEnv + " or .)");
  app.add_option("--gamma", cfg.gamma, "Step fraction of |J| per iteration")->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--delta", cfg.delta, "Relative cost change that stops the search")->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--max-iter", cfg.max_iter, "Sub-problem evaluations")->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--infeasible-stop", cfg.infeasible_stop, "Consecutive infeasible solves that stop the search")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--dx", cfg.dx, "Override the pipe segment length (m)")->check(CLI::PositiveNumber);
  app.add_option("--flows", cfg.flows, "flows.csv: fixed-mode schedule, variable-mode start, simulate input")
      ->check(CLI::ExistingFile);
  app.add_option("--source-temps", cfg.source_temps, "source_temps.csv for simulate")->check(CLI::ExistingFile);
  app.add_option("--flow-policy", cfg.policy, "Starting flows when --flows is absent")
      ->capture_default_str()
      ->check(CLI::IsMember({"midpoint", "nominal"}));
  app.add_flag("--paper-literal-coefficients", cfg.swapped_factor,
               "Use the (a m + b) left-hand factor in the pipe scheme");
  app.add_flag("--paper-literal-stepsize", cfg.negated_stepsize, "Use the (-Pg)'g step denominator");
  app.add_option("--dump-lp", cfg.dump_lp, "Write each evaluated program as an LP file into this directory");
  app.add_flag("--emit-plots", cfg.emit_plots, "Also write generation_vs_load.csv and grid_purchase.csv");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Combined heat and power dispatch with variable mass flow"};
  app.require_subcommand(1);
  RunConfig cfg;
  const std::vector<std::string> modes = {"variable", "fixed", "separate", "simulate", "compare"};
  for (const auto& m : modes) {
    auto* sub = app.add_subcommand(m, "Run the " + m + " mode");
    add_options(*sub, cfg);
    sub->callback([&cfg, m] { cfg.mode = m; });
  }
  auto* run_cmd = app.add_subcommand("run", "Run the mode given by --mode");
  add_options(*run_cmd, cfg);
  run_cmd->add_option("--mode", cfg.mode, "variable | fixed | separate | simulate | compare")
      ->required()
      ->check(CLI::IsMember(modes));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kFeasible : kError;
  }

  fs::path out = cfg.out;
  if (out.empty()) {
    const char* env = std::getenv(kOutEnv);
    out = env && *env ? fs::path(env) : fs::path(".");
  }

  auto fail = [&](const std::string& kind, const std::string& msg) {
    std::cerr << "error: " << msg << '\n';
    try {
      fs::create_directories(out);
      write_json(out / "error.json", {{"error", kind}, {"message", msg}, {"mode", cfg.mode}, {"exit_code", kError}});
    } catch (...) {
      std::cerr << "error: could not write error.json in " << out.string() << '\n';
    }
    return kError;
  };
  try {
    return run(cfg, out);
  } catch (const chp::InputError& e) {
    return fail("input_error", e.what());
  } catch (const RunError& e) {
    return fail(e.kind, e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", e.what());
  }
}
