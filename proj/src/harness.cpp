#include "chp/harness.hpp"

#include "chp/qp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <tuple>

namespace chp {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

constexpr double kUnbounded = 1e299;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Sparse program assembled row by row, in MW.
struct RowProgram {
  std::vector<Triplet> a, g, q;
  std::vector<double> b, h;
  VectorXd c;
  double c0 = 0.0;

  explicit RowProgram(Index n) : c(VectorXd::Zero(n)) {}
  Index eq(double rhs) {
    b.push_back(rhs);
    return static_cast<Index>(b.size()) - 1;
  }
  Index le(double rhs) {
    h.push_back(rhs);
    return static_cast<Index>(h.size()) - 1;
  }
  QuadraticProgram build() const {
    QuadraticProgram qp;
    const Index n = c.size();
    qp.Q.resize(n, n);
    qp.Q.setFromTriplets(q.begin(), q.end());
    qp.c = c;
    qp.c0 = c0;
    qp.A.resize(static_cast<Index>(b.size()), n);
    qp.A.setFromTriplets(a.begin(), a.end());
    qp.b = Eigen::Map<const VectorXd>(b.data(), static_cast<Index>(b.size()));
    qp.G.resize(static_cast<Index>(h.size()), n);
    qp.G.setFromTriplets(g.begin(), g.end());
    qp.h = Eigen::Map<const VectorXd>(h.data(), static_cast<Index>(h.size()));
    return qp;
  }
};

void ramp_rows(RowProgram& rp, Index cur, Index prev, double up, double down, double dt) {
  if (up < kUnbounded) {
    const Index r = rp.le(up * dt / kPowerScale);
    rp.g.emplace_back(r, cur, 1.0);
    rp.g.emplace_back(r, prev, -1.0);
  }
  if (down > -kUnbounded) {
    const Index r = rp.le(-down * dt / kPowerScale);
    rp.g.emplace_back(r, cur, -1.0);
    rp.g.emplace_back(r, prev, 1.0);
  }
}

// Stage 1: heat sources meet the summed heat load in every period.
bool heat_stage(const DispatchInstance& in, const QpSettings& settings, MatrixXd& h_out) {
  const Index ns = static_cast<Index>(in.sources.size()), n = in.periods;
  const double S = kPowerScale;
  // Variables per period: p then h for every source.
  auto p = [&](Index i, Index t) { return t * 2 * ns + i; };
  auto h = [&](Index i, Index t) { return t * 2 * ns + ns + i; };
  RowProgram rp(2 * ns * n);
  for (Index t = 0; t < n; ++t) {
    double load = 0.0;
    for (const auto& node : in.heat.nodes)
      if (node.kind == NodeKind::load) load += node.demand[t];
    const Index bal = rp.eq(load / S);
    for (Index i = 0; i < ns; ++i) {
      const auto& src = in.sources[static_cast<std::size_t>(i)];
      if (src.heat_node.empty()) {
        rp.a.emplace_back(rp.eq(0.0), h(i, t), 1.0);
        rp.a.emplace_back(rp.eq(0.0), p(i, t), 1.0);
        continue;
      }
      rp.a.emplace_back(bal, h(i, t), 1.0);
      for (const auto& row : src.operating_rows()) {
        const Index r = rp.le(row.v[t] / S);
        if (row.B != 0.0) rp.g.emplace_back(r, p(i, t), row.B);
        if (row.K != 0.0) rp.g.emplace_back(r, h(i, t), row.K);
      }
      if (t > 0) ramp_rows(rp, h(i, t), h(i, t - 1), src.ramp.up_h, src.ramp.down_h, in.dt);
      const auto e = effective_cost(src, static_cast<int>(t), in.dt);
      rp.c[h(i, t)] += e[3] * S;
      if (e[4] != 0.0) rp.q.emplace_back(h(i, t), h(i, t), 2.0 * e[4] * S * S);
    }
  }
  const QpSolution sol = solve_qp(rp.build(), settings);
  if (sol.status != QpStatus::optimal) return false;
  h_out.resize(ns, n);
  for (Index i = 0; i < ns; ++i)
    for (Index t = 0; t < n; ++t) h_out(i, t) = sol.x[h(i, t)] * S;
  return true;
}

// Stage 2: electric dispatch with the heat schedule frozen.
bool electric_stage(const DispatchInstance& in, const MatrixXd& hfix, const QpSettings& settings, MatrixXd& p_out,
                    MatrixXd& l_out, double& cost) {
  const Index ns = static_cast<Index>(in.sources.size()), n = in.periods;
  const Index nl = static_cast<Index>(in.electric.lines.size()), nb = static_cast<Index>(in.electric.buses.size());
  const double S = kPowerScale;
  auto p = [&](Index i, Index t) { return t * (ns + nl) + i; };
  auto l = [&](Index k, Index t) { return t * (ns + nl) + ns + k; };
  const MatrixXd sf = shift_factors(in.electric);
  std::vector<int> bus(static_cast<std::size_t>(ns));
  for (Index i = 0; i < ns; ++i) {
    const auto& s = in.sources[static_cast<std::size_t>(i)];
    bus[static_cast<std::size_t>(i)] = s.bus.empty() ? -1 : in.electric.bus_index(s.bus);
  }
  RowProgram rp((ns + nl) * n);
  for (Index t = 0; t < n; ++t) {
    double demand = 0.0;
    for (const auto& b : in.electric.buses) demand += b.demand[t];
    const Index bal = rp.eq(demand / S);
    for (Index i = 0; i < ns; ++i) {
      const auto& src = in.sources[static_cast<std::size_t>(i)];
      const double hv = hfix(i, t) / S;
      if (bus[static_cast<std::size_t>(i)] < 0) {
        rp.a.emplace_back(rp.eq(0.0), p(i, t), 1.0);
      } else {
        rp.a.emplace_back(bal, p(i, t), 1.0);
      }
      for (const auto& row : src.operating_rows()) {
        const double rhs = row.v[t] / S - row.K * hv;
        if (row.B == 0.0) {
          if (rhs < -1e-9 * (1.0 + std::abs(row.v[t] / S))) return false;  // frozen heat violates the region
          continue;
        }
        rp.g.emplace_back(rp.le(rhs), p(i, t), row.B);
      }
      if (t > 0) ramp_rows(rp, p(i, t), p(i, t - 1), src.ramp.up_e, src.ramp.down_e, in.dt);
      const auto e = effective_cost(src, static_cast<int>(t), in.dt);
      rp.c0 += e[0] + e[3] * hv * S + e[4] * hv * hv * S * S;
      rp.c[p(i, t)] += e[1] * S + e[5] * hv * S * S;
      if (e[2] != 0.0) rp.q.emplace_back(p(i, t), p(i, t), 2.0 * e[2] * S * S);
    }
    for (Index k = 0; k < nl; ++k) {
      // l = SF (injection - demand)
      double rhs = 0.0;
      for (Index b = 0; b < nb; ++b) rhs -= sf(k, b) * in.electric.buses[static_cast<std::size_t>(b)].demand[t] / S;
      const Index r = rp.eq(rhs);
      rp.a.emplace_back(r, l(k, t), 1.0);
      for (Index i = 0; i < ns; ++i)
        if (bus[static_cast<std::size_t>(i)] >= 0) rp.a.emplace_back(r, p(i, t), -sf(k, bus[static_cast<std::size_t>(i)]));
      const double lim = in.electric.lines[static_cast<std::size_t>(k)].limit[t] / S;
      rp.g.emplace_back(rp.le(lim), l(k, t), 1.0);
      rp.g.emplace_back(rp.le(lim), l(k, t), -1.0);
    }
  }
  const QpSolution sol = solve_qp(rp.build(), settings);
  if (sol.status != QpStatus::optimal) return false;
  p_out.resize(ns, n);
  l_out.resize(nl, n);
  for (Index t = 0; t < n; ++t) {
    for (Index i = 0; i < ns; ++i) p_out(i, t) = sol.x[p(i, t)] * S;
    for (Index k = 0; k < nl; ++k) l_out(k, t) = sol.x[l(k, t)] * S;
  }
  cost = sol.objective;
  return true;
}

}  // namespace

double schedule_cost(const DispatchInstance& in, const MatrixXd& p, const MatrixXd& h) {
  double total = 0.0;
  for (std::size_t i = 0; i < in.sources.size(); ++i)
    for (int t = 0; t < in.periods; ++t) {
      const auto e = effective_cost(in.sources[i], t, in.dt);
      const double pv = p(static_cast<Index>(i), t), hv = h(static_cast<Index>(i), t);
      total += e[0] + e[1] * pv + e[2] * pv * pv + e[3] * hv + e[4] * hv * hv + e[5] * pv * hv;
    }
  return total;
}

std::pair<double, double> curtailment(const DispatchInstance& in, const MatrixXd& p) {
  double curtailed = 0.0, available = 0.0;
  for (std::size_t i = 0; i < in.sources.size(); ++i) {
    const auto& r = in.sources[i].renewable;
    if (!r) continue;
    for (int t = 0; t < in.periods; ++t) {
      curtailed += std::max(0.0, r->available[t] - p(static_cast<Index>(i), t)) * in.dt / 3600.0;
      available += r->available[t] * in.dt / 3600.0;
    }
  }
  return {curtailed, available > 0.0 ? std::clamp(100.0 * curtailed / available, 0.0, 100.0) : 0.0};
}

DispatchResult fixed_flow_dispatch(const DispatchInstance& in, const FlowSchedule& m, const SubproblemOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  DispatchResult out;
  out.mode = "fixed";
  out.termination = Termination::single_solve;
  out.flows = m;
  const SubproblemResult res = evaluate_flow(in, m, opt);
  out.iterations = 1;
  IterationRecord rec;
  rec.k = 1;
  rec.objective = res.objective;
  if (res.status == SubproblemStatus::optimal) {
    out.feasible = true;
    out.objective = res.objective;
    out.state = res.state;
    rec.status = "accepted";
    rec.grad_norm = res.gradient.norm();
  } else {
    out.termination = Termination::no_feasible;
    out.relaxed_objective = res.relaxed_objective;
    out.cuts = res.cuts;
    rec.status = res.status == SubproblemStatus::infeasible ? "infeasible" : "failed";
  }
  out.wallclock_s = seconds_since(start);
  rec.wallclock_ms = out.wallclock_s * 1000.0;
  rec.cuts = out.cuts.size();
  out.log.push_back(rec);
  return out;
}

DispatchResult separate_dispatch(const DispatchInstance& in, const QpSettings& settings) {
  const auto start = std::chrono::steady_clock::now();
  DispatchResult out;
  out.mode = "separate";
  out.termination = Termination::single_solve;
  out.iterations = 2;
  MatrixXd h, p, l;
  double cost = 0.0;
  IterationRecord heat_rec, elec_rec;
  heat_rec.k = 1;
  elec_rec.k = 2;
  if (!heat_stage(in, settings, h)) {
    heat_rec.status = "infeasible";
    out.termination = Termination::no_feasible;
    out.log = {heat_rec};
  } else if (!electric_stage(in, h, settings, p, l, cost)) {
    heat_rec.status = "accepted";
    elec_rec.status = "infeasible";
    out.termination = Termination::no_feasible;
    out.log = {heat_rec, elec_rec};
  } else {
    heat_rec.status = elec_rec.status = "accepted";
    out.feasible = true;
    out.objective = cost;
    elec_rec.objective = cost;
    out.state.p = p;
    out.state.h = h;
    out.state.line_flow = l;
    out.log = {heat_rec, elec_rec};
  }
  out.wallclock_s = seconds_since(start);
  for (auto& r : out.log) r.wallclock_ms = out.wallclock_s * 1000.0;
  return out;
}

ComparisonReport compare_modes(const DispatchInstance& in, const SolverConfig& cfg) {
  ComparisonReport rep;
  rep.results.push_back(dispatch(in, cfg));
  rep.results.push_back(fixed_flow_dispatch(in, initial_flow(in, cfg), cfg.subproblem));
  rep.results.push_back(separate_dispatch(in, cfg.subproblem.qp));
  for (const auto& r : rep.results) {
    ModeSummary s;
    s.mode = r.mode;
    s.feasible = r.feasible;
    s.status = to_string(r.termination);
    s.cost = r.objective;
    s.wallclock_s = r.wallclock_s;
    s.iterations = r.iterations;
    if (r.feasible) std::tie(s.curtailment_wh, s.curtailment_pct) = curtailment(in, r.state.p);
    rep.modes.push_back(s);
    if (!r.feasible) rep.notes.push_back(r.mode + " mode infeasible (" + s.status + "); ordering skipped for it");
  }
  const auto& v = rep.modes[0];
  const auto& f = rep.modes[1];
  const auto& s = rep.modes[2];
  auto leq = [](double a, double b) { return a <= b + 1e-6 * std::max(std::abs(a), std::abs(b)); };
  auto gap = [](double lo, double hi) { return (hi - lo) / std::abs(hi); };
  bool holds = true;
  if (v.feasible && f.feasible) {
    rep.ordering_checked = true;
    rep.fixed_over_variable = gap(v.cost, f.cost);
    if (!leq(v.cost, f.cost)) holds = false, rep.notes.push_back("variable-flow cost exceeds fixed-flow cost");
  }
  if (f.feasible && s.feasible) {
    rep.ordering_checked = true;
    rep.separate_over_fixed = gap(f.cost, s.cost);
    if (!leq(f.cost, s.cost)) holds = false, rep.notes.push_back("fixed-flow cost exceeds separate cost");
  }
  rep.ordering_holds = rep.ordering_checked && holds;
  return rep;
}

double VerificationReport::worst() const {
  double w = 0.0;
  for (const auto& [name, v] : families) w = std::max(w, v);
  return w;
}

double VerificationReport::violation(const std::string& family) const {
  for (const auto& [name, v] : families)
    if (name == family) return v;
  return 0.0;
}

VerificationReport verify_solution(const DispatchInstance& in, const DispatchResult& res, ThermalScheme scheme) {
  VerificationReport rep;
  const auto& st = res.state;
  const Index ns = static_cast<Index>(in.sources.size()), n = in.periods;
  const Index nl = static_cast<Index>(in.electric.lines.size()), nb = static_cast<Index>(in.electric.buses.size());
  if (st.p.rows() != ns || st.p.cols() != n) throw InputError("verify_solution: result carries no schedule");
  auto family = [&](const std::string& name) -> double& {
    for (auto& f : rep.families)
      if (f.first == name) return f.second;
    rep.families.emplace_back(name, 0.0);
    return rep.families.back().second;
  };
  auto note = [&](const std::string& name, double v) {
    double& slot = family(name);
    slot = std::max(slot, std::isfinite(v) ? v : std::numeric_limits<double>::infinity());
  };

  // Electric side.
  const MatrixXd sf = nl > 0 ? shift_factors(in.electric) : MatrixXd(0, nb);
  for (Index t = 0; t < n; ++t) {
    VectorXd injection = VectorXd::Zero(nb);
    for (Index b = 0; b < nb; ++b) injection[b] -= in.electric.buses[static_cast<std::size_t>(b)].demand[t];
    for (Index i = 0; i < ns; ++i) {
      const auto& src = in.sources[static_cast<std::size_t>(i)];
      if (src.bus.empty()) {
        note("operating_region", std::abs(st.p(i, t)));
        continue;
      }
      injection[in.electric.bus_index(src.bus)] += st.p(i, t);
    }
    note("power_balance", std::abs(injection.sum()));
    for (Index k = 0; k < nl; ++k) {
      const double flow = sf.row(k).dot(injection);
      note("line_flow", std::abs(st.line_flow(k, t) - flow));
      note("line_limit", std::max(0.0, std::abs(st.line_flow(k, t)) - in.electric.lines[static_cast<std::size_t>(k)].limit[t]));
    }
  }

  // Source regions and ramps.
  for (Index i = 0; i < ns; ++i) {
    const auto& src = in.sources[static_cast<std::size_t>(i)];
    if (src.heat_node.empty())
      for (Index t = 0; t < n; ++t) note("operating_region", std::abs(st.h(i, t)));
    for (Index t = 0; t < n; ++t) {
      for (const auto& row : src.operating_rows())
        note("operating_region", std::max(0.0, row.B * st.p(i, t) + row.K * st.h(i, t) - row.v[t]));
      if (t == 0) continue;
      const double dp = st.p(i, t) - st.p(i, t - 1), dh = st.h(i, t) - st.h(i, t - 1);
      if (src.ramp.up_e < kUnbounded) note("electric_ramp", std::max(0.0, dp - src.ramp.up_e * in.dt));
      if (src.ramp.down_e > -kUnbounded) note("electric_ramp", std::max(0.0, src.ramp.down_e * in.dt - dp));
      if (src.ramp.up_h < kUnbounded) note("heat_ramp", std::max(0.0, dh - src.ramp.up_h * in.dt));
      if (src.ramp.down_h > -kUnbounded) note("heat_ramp", std::max(0.0, src.ramp.down_h * in.dt - dh));
    }
  }

  // Heat generation against demand.
  rep.storage_proxy = VectorXd::Zero(n);
  double generated = 0.0, demanded = 0.0;
  for (Index t = 0; t < n; ++t) {
    double g = 0.0, d = 0.0;
    for (Index i = 0; i < ns; ++i)
      if (!in.sources[static_cast<std::size_t>(i)].heat_node.empty()) g += st.h(i, t);
    for (const auto& node : in.heat.nodes)
      if (node.kind == NodeKind::load) d += node.demand[t];
    rep.storage_proxy[t] = g - d;
    generated += g;
    demanded += d;
    if (res.flows.size() == 0) note("heat_balance", std::abs(g - d));
  }
  note("heat_adequacy", std::max(0.0, demanded - generated));
  if (res.flows.size() == 0) return rep;

  // Network side.
  const auto& heat = in.heat;
  const FlowSchedule& m = res.flows;
  const Index nn = static_cast<Index>(heat.node_count()), np = static_cast<Index>(heat.pipe_count());
  const Index nsup = static_cast<Index>(heat.supply_pipes.size());
  for (Index j = 0; j < np; ++j) {
    const auto& p = heat.pipe(static_cast<std::size_t>(j));
    for (Index t = 0; t < n; ++t)
      note("flow_bounds", std::max({0.0, p.flow_min[t] - m(j, t), m(j, t) - p.flow_max[t], -m(j, t)}));
  }
  for (Index t = 0; t < n; ++t) {
    const VectorXd mn = exchanger_flows(heat, m.period(t).head(nsup));
    for (Index k = 0; k < nn; ++k) {
      const auto& node = heat.nodes[static_cast<std::size_t>(k)];
      const bool load = node.kind == NodeKind::load;
      // Mixing on both sides; the exchanger stream enters at sources (supply) and loads (return).
      for (int side = 0; side < 2; ++side) {
        double total = 0.0, weighted = 0.0;
        for (Index j = 0; j < np; ++j) {
          const bool supply_pipe = j < nsup;
          if (supply_pipe != (side == 0)) continue;
          if (heat.node_index(heat.pipe(static_cast<std::size_t>(j)).to) != k) continue;
          total += m(j, t);
          weighted += m(j, t) * st.pipe_outlet(j, t);
        }
        const bool exch = side == 0 ? !load : load;
        if (exch && mn[k] > 0.0) {
          total += mn[k];
          weighted += mn[k] * (side == 0 ? st.exchanger_supply(k, t) : st.exchanger_return(k, t));
        }
        if (total <= 0.0) continue;
        const double node_temp = side == 0 ? st.node_supply(k, t) : st.node_return(k, t);
        note(side == 0 ? "supply_mixing" : "return_mixing", std::abs(node_temp - weighted / total));
      }
      double src_heat = 0.0;
      for (Index i = 0; i < ns; ++i)
        if (in.sources[static_cast<std::size_t>(i)].heat_node == node.id) src_heat += st.h(i, t);
      if (mn[k] > 0.0) {
        const double exchanged = in.cp * mn[k] * (st.exchanger_supply(k, t) - st.exchanger_return(k, t));
        note("node_heat", std::abs(exchanged - (load ? node.demand[t] : src_heat)));
      } else if (load && node.demand[t] > 0.0) {
        note("node_heat", node.demand[t]);
      }
      if (load) note("exchanger_identity", std::abs(st.node_supply(k, t) - st.exchanger_supply(k, t)));
      else note("exchanger_identity", std::abs(st.node_return(k, t) - st.exchanger_return(k, t)));
      const auto bound = [&](const std::optional<Interval>& iv, double v) {
        if (iv) note("temperature_bounds", std::max({0.0, iv->lo - v, v - iv->hi}));
      };
      bound(node.supply_temp, st.exchanger_supply(k, t));
      bound(node.return_temp, st.exchanger_return(k, t));
    }
    for (Index j = 0; j < np; ++j) {
      const std::size_t jj = static_cast<std::size_t>(j);
      const auto& pipe = heat.pipe(jj);
      const Index from = heat.node_index(pipe.from);
      const double node_temp = j < nsup ? st.node_supply(from, t) : st.node_return(from, t);
      note("pipe_inlet", std::abs(st.pipe_inlet(j, t) - node_temp));
      const MatrixXd& tau = st.pipe_temps[jj];
      const Index s = tau.rows() - 1;
      note("pipe_boundary", std::max(std::abs(tau(0, t + 1) - st.pipe_inlet(j, t)), std::abs(tau(s, t + 1) - st.pipe_outlet(j, t))));
      const auto k = pipe_coefficients(pipe, in.dt, in.pipe_dx(jj), in.rho, in.cp, static_cast<int>(t));
      const double lhs = lhs_factor(k, m(j, t), scheme);
      for (Index i = 1; i <= s; ++i) {
        const double r = lhs * tau(i, t + 1) - k.c * tau(i, t) - k.b * m(j, t) * tau(i - 1, t + 1) - k.d;
        note("pipe_transport", std::abs(r / lhs));
      }
    }
  }
  // Forward simulation from the source temperatures reproduces the whole thermal state.
  try {
    const ThermalState sim = simulate_network(in, m, st.exchanger_supply, scheme);
    for (Index j = 0; j < np; ++j)
      note("simulator", (sim.pipe_temps[static_cast<std::size_t>(j)] - st.pipe_temps[static_cast<std::size_t>(j)]).cwiseAbs().maxCoeff());
    note("simulator", (sim.node_supply - st.node_supply).cwiseAbs().maxCoeff());
    note("simulator", (sim.node_return - st.node_return).cwiseAbs().maxCoeff());
  } catch (const InputError&) {
    note("simulator", std::numeric_limits<double>::infinity());
  }
  return rep;
}

}  // namespace chp
