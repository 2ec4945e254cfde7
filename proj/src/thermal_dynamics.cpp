#include "chp/thermal_dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace chp {

namespace {

struct SideView {
  NetworkSide side;
  std::size_t offset;  // first flow-schedule index of this side
  const std::vector<HeatPipe>* pipes;
};

SideView view(const HeatNetwork& heat, NetworkSide side) {
  return side == NetworkSide::supply ? SideView{side, 0, &heat.supply_pipes}
                                     : SideView{side, heat.supply_pipes.size(), &heat.return_pipes};
}

// Advances one pipe to column t (or fills a steady profile when steady is set).
void advance_pipe(const DispatchInstance& in, std::size_t j, int t, double m, double inlet, bool steady,
                  ThermalScheme scheme, Eigen::MatrixXd& temps) {
  const auto& pipe = in.heat.pipe(j);
  auto k = pipe_coefficients(pipe, in.dt, in.pipe_dx(j), in.rho, in.cp, steady ? 0 : t - 1);
  const int col = steady ? 0 : t;
  temps(0, col) = inlet;
  for (Eigen::Index i = 1; i < temps.rows(); ++i) {
    if (steady) {
      const double den = k.b * m + k.loss();
      temps(i, col) = den > 0.0 ? k.ambient + k.b * m * (temps(i - 1, col) - k.ambient) / den : temps(i - 1, col);
    } else {
      temps(i, col) = step_segment(k, m, temps(i, col - 1), temps(i - 1, col), scheme);
    }
  }
}

struct Mixing {
  Eigen::VectorXd temps;
  Eigen::VectorXd flows;
};

Mixing entering(const DispatchInstance& in, const SideView& v, std::size_t node, const Eigen::VectorXd& m,
                const std::vector<Eigen::MatrixXd>& temps, int col) {
  Mixing mix;
  std::vector<double> ts, fs;
  for (std::size_t p = 0; p < v.pipes->size(); ++p) {
    if (in.heat.node_index((*v.pipes)[p].to) != static_cast<int>(node)) continue;
    const std::size_t j = v.offset + p;
    ts.push_back(temps[j](temps[j].rows() - 1, col));
    fs.push_back(m[static_cast<Eigen::Index>(j)]);
  }
  mix.temps = Eigen::Map<Eigen::VectorXd>(ts.data(), static_cast<Eigen::Index>(ts.size()));
  mix.flows = Eigen::Map<Eigen::VectorXd>(fs.data(), static_cast<Eigen::Index>(fs.size()));
  return mix;
}

// One period of the network sweep. Writes node quantities into column `out_col`
// and pipe temperatures into column `t` (or column 0 in steady mode).
void sweep_period(const DispatchInstance& in, int t, const Eigen::VectorXd& m, const Eigen::VectorXd& src_temps,
                  const Eigen::VectorXd& demand, bool steady, ThermalScheme scheme,
                  const Eigen::VectorXd& fallback_supply, const Eigen::VectorXd& fallback_return,
                  ThermalState& st, int out_col) {
  const auto& heat = in.heat;
  const auto ns = static_cast<Eigen::Index>(heat.supply_pipes.size());
  const Eigen::VectorXd mn = exchanger_flows(heat, m.head(ns));
  const int col = steady ? 0 : t;

  const SideView sv = view(heat, NetworkSide::supply);
  for (std::size_t k : topological_order(heat, NetworkSide::supply)) {
    const auto kk = static_cast<Eigen::Index>(k);
    const Mixing mix = entering(in, sv, k, m, st.pipe_temps, col);
    const bool source = heat.nodes[k].kind == NodeKind::source;
    const double exch_flow = source ? std::max(mn[kk], 0.0) : 0.0;
    const double total = mix.flows.sum() + exch_flow;
    double temp = fallback_supply[kk];
    if (total > 0.0) temp = mix_node(mix.temps, mix.flows, exch_flow, source ? src_temps[kk] : 0.0);
    st.node_supply(kk, out_col) = temp;
    st.exchanger_supply(kk, out_col) = source ? src_temps[kk] : temp;
    for (std::size_t p = 0; p < heat.supply_pipes.size(); ++p)
      if (heat.node_index(heat.supply_pipes[p].from) == static_cast<int>(k))
        advance_pipe(in, p, t, m[static_cast<Eigen::Index>(p)], temp, steady, scheme, st.pipe_temps[p]);
  }

  for (std::size_t k = 0; k < heat.node_count(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    st.exchanger_flow(kk, out_col) = mn[kk];
    if (heat.nodes[k].kind != NodeKind::load) continue;
    const double h = demand[kk];
    if (mn[kk] > 0.0) {
      st.exchanger_return(kk, out_col) = st.exchanger_supply(kk, out_col) - h / (in.cp * mn[kk]);
    } else if (h == 0.0) {
      st.exchanger_return(kk, out_col) = st.exchanger_supply(kk, out_col);
    } else {
      throw InputError("load node " + heat.nodes[k].id + " has demand but no exchanger flow in period " +
                       std::to_string(t));
    }
    st.node_heat(kk, out_col) = h;
  }

  const SideView rv = view(heat, NetworkSide::ret);
  for (std::size_t k : topological_order(heat, NetworkSide::ret)) {
    const auto kk = static_cast<Eigen::Index>(k);
    const Mixing mix = entering(in, rv, k, m, st.pipe_temps, col);
    const bool load = heat.nodes[k].kind == NodeKind::load;
    const double exch_flow = load ? std::max(mn[kk], 0.0) : 0.0;
    const double total = mix.flows.sum() + exch_flow;
    double temp = fallback_return[kk];
    if (total > 0.0) temp = mix_node(mix.temps, mix.flows, exch_flow, load ? st.exchanger_return(kk, out_col) : 0.0);
    st.node_return(kk, out_col) = temp;
    if (!load) {
      st.exchanger_return(kk, out_col) = temp;
      st.node_heat(kk, out_col) = in.cp * mn[kk] * (st.exchanger_supply(kk, out_col) - temp);
    }
    for (std::size_t p = 0; p < heat.return_pipes.size(); ++p)
      if (heat.node_index(heat.return_pipes[p].from) == static_cast<int>(k)) {
        const std::size_t j = rv.offset + p;
        advance_pipe(in, j, t, m[static_cast<Eigen::Index>(j)], temp, steady, scheme, st.pipe_temps[j]);
      }
  }
}

ThermalState empty_state(const DispatchInstance& in, int cols, bool with_pipes) {
  ThermalState st;
  const auto nn = static_cast<Eigen::Index>(in.heat.node_count());
  for (auto* m : {&st.node_supply, &st.node_return, &st.exchanger_supply, &st.exchanger_return, &st.exchanger_flow,
                  &st.node_heat})
    *m = Eigen::MatrixXd::Zero(nn, cols);
  if (with_pipes)
    for (std::size_t j = 0; j < in.heat.pipe_count(); ++j)
      st.pipe_temps.push_back(Eigen::MatrixXd::Zero(in.segments(j) + 1, in.periods + 1));
  return st;
}

}  // namespace

PipeCoefficients<double> pipe_coefficients(const HeatPipe& pipe, double dt, double dx, double rho, double cp,
                                           int period) {
  if (!(dt > 0.0) || !(dx > 0.0) || !(pipe.area > 0.0) || !(pipe.resistance > 0.0))
    throw InputError("pipe " + pipe.id + ": coefficients need positive dt, dx, area and resistance");
  const double loss = 1.0 / (rho * cp * pipe.area * pipe.resistance);
  const double ambient = pipe.ambient.size() > period ? pipe.ambient[period] : 0.0;
  return {1.0 / dt + loss, 1.0 / (dx * rho * pipe.area), 1.0 / dt, ambient * loss, ambient};
}

Eigen::MatrixXd simulate_pipe(const HeatPipe& pipe, double dt, double dx, double rho, double cp,
                              const Eigen::VectorXd& flows, const Eigen::VectorXd& inlet,
                              const Eigen::VectorXd& initial_profile, ThermalScheme scheme) {
  const int s = segment_count(pipe, dx);
  const Eigen::Index n = inlet.size();
  if (initial_profile.size() != s + 1) throw InputError("simulate_pipe: initial profile must have S+1 entries");
  if (flows.size() != n) throw InputError("simulate_pipe: flow and inlet series lengths differ");
  Eigen::MatrixXd temps(s + 1, n + 1);
  temps.col(0) = initial_profile;
  for (Eigen::Index t = 1; t <= n; ++t) {
    const auto k = pipe_coefficients(pipe, dt, dx, rho, cp, static_cast<int>(t - 1));
    temps(0, t) = inlet[t - 1];
    for (int i = 1; i <= s; ++i) temps(i, t) = step_segment(k, flows[t - 1], temps(i, t - 1), temps(i - 1, t), scheme);
  }
  return temps;
}

std::vector<std::size_t> topological_order(const HeatNetwork& heat, NetworkSide side) {
  const auto& pipes = side == NetworkSide::supply ? heat.supply_pipes : heat.return_pipes;
  std::vector<int> indeg(heat.node_count(), 0);
  for (const auto& p : pipes) ++indeg[static_cast<std::size_t>(heat.node_index(p.to))];
  std::vector<std::size_t> order, ready;
  for (std::size_t k = heat.node_count(); k-- > 0;)
    if (indeg[k] == 0) ready.push_back(k);
  while (!ready.empty()) {
    const std::size_t k = ready.back();
    ready.pop_back();
    order.push_back(k);
    for (const auto& p : pipes)
      if (heat.node_index(p.from) == static_cast<int>(k)) {
        const auto to = static_cast<std::size_t>(heat.node_index(p.to));
        if (--indeg[to] == 0) ready.push_back(to);
      }
  }
  if (order.size() != heat.node_count()) throw InputError("heat network side contains a directed cycle");
  return order;
}

double initial_node_temperature(const DispatchInstance& in, std::size_t node, NetworkSide side) {
  const auto v = view(in.heat, side);
  for (std::size_t p = 0; p < v.pipes->size(); ++p)
    if (in.heat.node_index((*v.pipes)[p].from) == static_cast<int>(node)) return in.initial_profiles[v.offset + p][0];
  for (std::size_t p = 0; p < v.pipes->size(); ++p)
    if (in.heat.node_index((*v.pipes)[p].to) == static_cast<int>(node)) {
      const auto& prof = in.initial_profiles[v.offset + p];
      return prof[prof.size() - 1];
    }
  return 0.0;
}

ThermalState simulate_network(const DispatchInstance& in, const FlowSchedule& flows,
                              const Eigen::MatrixXd& source_supply_temps, ThermalScheme scheme) {
  const int n = in.periods;
  const auto nn = static_cast<Eigen::Index>(in.heat.node_count());
  if (flows.pipes() != static_cast<Eigen::Index>(in.heat.pipe_count()) || flows.periods() != n)
    throw InputError("simulate_network: flow schedule dimension mismatch");
  if (source_supply_temps.rows() != nn || source_supply_temps.cols() != n)
    throw InputError("simulate_network: source temperature matrix must be nodes x N");
  if (in.initial_profiles.size() != in.heat.pipe_count())
    throw InputError("simulate_network: missing initial pipe profiles");
  if ((flows.matrix().array() < 0.0).any()) throw InputError("simulate_network: mass flow must be nonnegative");

  ThermalState st = empty_state(in, n, true);
  for (std::size_t j = 0; j < in.heat.pipe_count(); ++j) {
    if (in.initial_profiles[j].size() != st.pipe_temps[j].rows())
      throw InputError("simulate_network: initial profile length mismatch for pipe " + in.heat.pipe(j).id);
    st.pipe_temps[j].col(0) = in.initial_profiles[j];
  }
  Eigen::VectorXd fb_s(nn), fb_r(nn), demand(nn);
  for (Eigen::Index k = 0; k < nn; ++k) {
    fb_s[k] = initial_node_temperature(in, static_cast<std::size_t>(k), NetworkSide::supply);
    fb_r[k] = initial_node_temperature(in, static_cast<std::size_t>(k), NetworkSide::ret);
  }
  for (int t = 1; t <= n; ++t) {
    for (Eigen::Index k = 0; k < nn; ++k) {
      const auto& node = in.heat.nodes[static_cast<std::size_t>(k)];
      demand[k] = node.kind == NodeKind::load ? node.demand[t - 1] : 0.0;
    }
    sweep_period(in, t, flows.period(t - 1), source_supply_temps.col(t - 1), demand, false, scheme, fb_s, fb_r, st,
                 t - 1);
    fb_s = st.node_supply.col(t - 1);
    fb_r = st.node_return.col(t - 1);
  }
  return st;
}

std::vector<Eigen::VectorXd> steady_state_profiles(const DispatchInstance& in, const Eigen::VectorXd& pipe_flows,
                                                   const Eigen::VectorXd& source_supply_temps) {
  const auto nn = static_cast<Eigen::Index>(in.heat.node_count());
  if (pipe_flows.size() != static_cast<Eigen::Index>(in.heat.pipe_count()) || source_supply_temps.size() != nn)
    throw InputError("steady_state_profiles: dimension mismatch");
  ThermalState st = empty_state(in, 1, false);
  for (std::size_t j = 0; j < in.heat.pipe_count(); ++j) st.pipe_temps.push_back(Eigen::MatrixXd::Zero(in.segments(j) + 1, 1));
  Eigen::VectorXd demand = Eigen::VectorXd::Zero(nn), fb(nn);
  for (Eigen::Index k = 0; k < nn; ++k) {
    const auto& node = in.heat.nodes[static_cast<std::size_t>(k)];
    if (node.kind == NodeKind::load && node.demand.size() > 0) demand[k] = node.demand[0];
    fb[k] = source_supply_temps[k];
  }
  sweep_period(in, 1, pipe_flows, source_supply_temps, demand, true, ThermalScheme::implicit_upwind, fb, fb, st, 0);
  std::vector<Eigen::VectorXd> out;
  for (const auto& p : st.pipe_temps) out.emplace_back(p.col(0));
  return out;
}

}  // namespace chp
