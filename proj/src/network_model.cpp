#include "chp/network_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace chp {

namespace {

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

// Nonempty and bounded check of a 2-D polytope {B p + K h <= v} by brute force
// over pairwise boundary intersections and candidate recession directions.
void check_polytope(const EnergySource& src, int t, std::vector<std::string>& out) {
  const auto rows = src.operating_rows();
  if (rows.empty()) {
    out.push_back(cat("source ", src.id, ": operating region has no rows (unbounded)"));
    return;
  }
  auto satisfied = [&](double p, double h) {
    for (const auto& r : rows) {
      const double scale = 1.0 + std::abs(r.v[t]);
      if (r.B * p + r.K * h > r.v[t] + 1e-9 * scale) return false;
    }
    return true;
  };
  auto recedes = [&](double dp, double dh) {
    for (const auto& r : rows)
      if (r.B * dp + r.K * dh > 1e-12 * (std::abs(r.B) + std::abs(r.K))) return false;
    return true;
  };
  for (const auto& r : rows) {
    if (r.B == 0.0 && r.K == 0.0) continue;
    if (recedes(r.K, -r.B) || recedes(-r.K, r.B)) {
      out.push_back(cat("source ", src.id, ": operating region unbounded at period ", t + 1));
      return;
    }
  }
  bool vertex = false;
  for (std::size_t a = 0; a < rows.size() && !vertex; ++a) {
    for (std::size_t b = a + 1; b < rows.size() && !vertex; ++b) {
      const double det = rows[a].B * rows[b].K - rows[a].K * rows[b].B;
      if (std::abs(det) < 1e-14 * (1.0 + std::abs(rows[a].B) + std::abs(rows[b].K))) continue;
      const double p = (rows[a].v[t] * rows[b].K - rows[a].K * rows[b].v[t]) / det;
      const double h = (rows[a].B * rows[b].v[t] - rows[a].v[t] * rows[b].B) / det;
      vertex = satisfied(p, h);
    }
  }
  if (!vertex) out.push_back(cat("source ", src.id, ": operating region empty at period ", t + 1));
}

void check_series(const Eigen::VectorXd& v, int n, const std::string& what, std::vector<std::string>& out) {
  if (v.size() != n) out.push_back(cat(what, ": expected ", n, " periods, got ", v.size()));
}

void check_radial(const HeatNetwork& heat, const std::vector<HeatPipe>& pipes, const char* side,
                  std::vector<std::string>& out) {
  DisjointSets sets(heat.node_count());
  std::set<int> touched;
  for (const auto& p : pipes) {
    const int a = heat.node_index(p.from), b = heat.node_index(p.to);
    if (a < 0 || b < 0) continue;
    touched.insert(a);
    touched.insert(b);
    if (a == b || !sets.unite(a, b)) {
      out.push_back(cat(side, " graph not radial (cycle through pipe ", p.id, ")"));
      return;
    }
  }
  if (heat.node_count() > 1 && touched.size() != heat.node_count()) {
    for (std::size_t k = 0; k < heat.node_count(); ++k)
      if (!touched.count(static_cast<int>(k)))
        out.push_back(cat("node ", heat.nodes[k].id, " is not connected in the ", side, " graph"));
  }
}

}  // namespace

const HeatPipe& HeatNetwork::pipe(std::size_t j) const {
  return j < supply_pipes.size() ? supply_pipes[j] : return_pipes.at(j - supply_pipes.size());
}

int HeatNetwork::node_index(const std::string& id) const {
  for (std::size_t k = 0; k < nodes.size(); ++k)
    if (nodes[k].id == id) return static_cast<int>(k);
  return -1;
}

int HeatNetwork::pipe_index(const std::string& id) const {
  for (std::size_t j = 0; j < pipe_count(); ++j)
    if (pipe(j).id == id) return static_cast<int>(j);
  return -1;
}

Eigen::MatrixXd HeatNetwork::incidence(NetworkSide side) const {
  const auto& pipes = side == NetworkSide::supply ? supply_pipes : return_pipes;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nodes.size()),
                                            static_cast<Eigen::Index>(pipes.size()));
  for (std::size_t j = 0; j < pipes.size(); ++j) {
    const int from = node_index(pipes[j].from), to = node_index(pipes[j].to);
    if (from < 0 || to < 0) throw InputError("pipe " + pipes[j].id + " references an unknown node");
    a(from, static_cast<Eigen::Index>(j)) = -1.0;
    a(to, static_cast<Eigen::Index>(j)) = 1.0;
  }
  return a;
}

int ElectricNetwork::bus_index(const std::string& id) const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == id) return static_cast<int>(i);
  return -1;
}

double DispatchInstance::pipe_dx(std::size_t j) const { return heat.pipe(j).dx.value_or(dx); }

int DispatchInstance::segments(std::size_t j) const { return segment_count(heat.pipe(j), pipe_dx(j)); }

int segment_count(const HeatPipe& pipe, double dx) {
  if (!(dx > 0.0)) throw InputError("segment length must be positive");
  // Guard the ceiling against representation noise (300/100 must give 3).
  const double ratio = pipe.length / dx;
  const double nearest = std::round(ratio);
  const double n = std::abs(ratio - nearest) < 1e-9 * std::max(1.0, ratio) ? nearest : std::ceil(ratio);
  return std::max(1, static_cast<int>(n));
}

Eigen::VectorXd node_mass_flow(const Eigen::MatrixXd& incidence, const Eigen::Ref<const Eigen::VectorXd>& flows) {
  if (incidence.cols() != flows.size())
    throw InputError(cat("node_mass_flow: incidence has ", incidence.cols(), " pipes, flow vector has ",
                         flows.size()));
  return incidence * flows;
}

Eigen::VectorXd exchanger_flows(const HeatNetwork& heat, const Eigen::Ref<const Eigen::VectorXd>& supply_flows) {
  Eigen::VectorXd mn = node_mass_flow(heat.incidence(NetworkSide::supply), supply_flows);
  for (std::size_t k = 0; k < heat.node_count(); ++k)
    if (heat.nodes[k].kind == NodeKind::source) mn[static_cast<Eigen::Index>(k)] *= -1.0;
  return mn;
}

Eigen::MatrixXd shift_factors(const ElectricNetwork& network) {
  const auto nb = static_cast<Eigen::Index>(network.buses.size());
  const auto nl = static_cast<Eigen::Index>(network.lines.size());
  Eigen::MatrixXd sf(nl, nb);
  const bool explicit_rows = nl > 0 && std::all_of(network.lines.begin(), network.lines.end(),
                                                   [](const Line& l) { return l.shift_factors.has_value(); });
  if (explicit_rows) {
    for (Eigen::Index i = 0; i < nl; ++i) {
      const auto& row = *network.lines[static_cast<std::size_t>(i)].shift_factors;
      if (row.size() != nb) throw InputError("line " + network.lines[static_cast<std::size_t>(i)].id +
                                             ": shift-factor row length differs from bus count");
      sf.row(i) = row.transpose();
    }
    return sf;
  }
  if (nb == 0) return sf;

  const int slack = network.slack_bus.empty() ? 0 : network.bus_index(network.slack_bus);
  if (slack < 0) throw InputError("unknown slack bus " + network.slack_bus);

  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(nb, nb);
  DisjointSets sets(static_cast<std::size_t>(nb));
  for (const auto& l : network.lines) {
    const int f = network.bus_index(l.from), t = network.bus_index(l.to);
    if (f < 0 || t < 0) throw InputError("line " + l.id + " references an unknown bus");
    if (!(l.reactance > 0.0)) throw InputError("line " + l.id + ": reactance must be positive");
    const double y = 1.0 / l.reactance;
    b(f, f) += y;
    b(t, t) += y;
    b(f, t) -= y;
    b(t, f) -= y;
    sets.unite(f, t);
  }
  for (Eigen::Index i = 0; i < nb; ++i)
    if (sets.find(static_cast<int>(i)) != sets.find(slack)) throw InputError("electric network is disconnected");

  // Reduced susceptance without the slack row/column; X holds angle sensitivities.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < nb; ++i)
    if (i != slack) keep.push_back(i);
  const auto nr = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd br(nr, nr);
  for (Eigen::Index r = 0; r < nr; ++r)
    for (Eigen::Index c = 0; c < nr; ++c) br(r, c) = b(keep[r], keep[c]);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(nb, nb);
  if (nr > 0) {
    const Eigen::MatrixXd xr = br.ldlt().solve(Eigen::MatrixXd::Identity(nr, nr));
    for (Eigen::Index r = 0; r < nr; ++r)
      for (Eigen::Index c = 0; c < nr; ++c) x(keep[r], keep[c]) = xr(r, c);
  }
  for (Eigen::Index i = 0; i < nl; ++i) {
    const auto& l = network.lines[static_cast<std::size_t>(i)];
    const int f = network.bus_index(l.from), t = network.bus_index(l.to);
    sf.row(i) = (x.row(f) - x.row(t)) / l.reactance;
  }
  return sf;
}

ValidationReport validate(const DispatchInstance& in) {
  ValidationReport rep;
  auto& out = rep.violations;
  const int n = in.periods;
  if (n < 1) out.push_back("horizon: N must be at least 1");
  if (!(in.dt > 0.0)) out.push_back("horizon: dt must be positive");
  if (!(in.dx > 0.0)) out.push_back("horizon: dx must be positive");
  if (!(in.rho > 0.0) || !(in.cp > 0.0)) out.push_back("physics: rho and cp must be positive");
  if (n < 1) return rep;

  const auto& heat = in.heat;
  std::set<std::string> ids;
  for (const auto& node : heat.nodes) {
    if (!ids.insert(node.id).second) out.push_back("duplicate heat node id " + node.id);
    if (node.kind == NodeKind::load) {
      check_series(node.demand, n, "node " + node.id + " demand", out);
      if (node.demand.size() == n && (node.demand.array() < 0.0).any())
        out.push_back("node " + node.id + ": heat demand must be nonnegative");
      if (node.demand.size() == n && (node.demand.array() > 0.0).any() &&
          (!node.exchanger_flow || !(node.exchanger_flow->lo > 0.0)))
        out.push_back("node " + node.id + ": load with demand needs a positive exchanger flow lower bound");
    }
    for (const auto* box : {&node.exchanger_flow, &node.supply_temp, &node.return_temp})
      if (*box && (*box)->lo > (*box)->hi) out.push_back("node " + node.id + ": bound interval inverted");
  }

  std::set<std::string> pipe_ids;
  for (std::size_t j = 0; j < heat.pipe_count(); ++j) {
    const auto& p = heat.pipe(j);
    if (!pipe_ids.insert(p.id).second) out.push_back("duplicate pipe id " + p.id);
    if (heat.node_index(p.from) < 0 || heat.node_index(p.to) < 0)
      out.push_back("pipe " + p.id + ": unknown endpoint");
    if (!(p.length > 0.0)) out.push_back("pipe " + p.id + ": length must be positive");
    if (!(p.area > 0.0)) out.push_back("pipe " + p.id + ": area must be positive");
    if (!(p.resistance > 0.0)) out.push_back("pipe " + p.id + ": thermal resistance must be positive");
    if (p.dx && !(*p.dx > 0.0)) out.push_back("pipe " + p.id + ": dx must be positive");
    check_series(p.flow_min, n, "pipe " + p.id + " flow_min", out);
    check_series(p.flow_max, n, "pipe " + p.id + " flow_max", out);
    check_series(p.ambient, n, "pipe " + p.id + " ambient", out);
    if (p.flow_min.size() == n && p.flow_max.size() == n) {
      if ((p.flow_min.array() < 0.0).any()) out.push_back("pipe " + p.id + ": mass flow bound must be nonnegative");
      if ((p.flow_min.array() > p.flow_max.array()).any())
        out.push_back("pipe " + p.id + ": flow_min exceeds flow_max");
    }
  }
  check_radial(heat, heat.supply_pipes, "supply", out);
  check_radial(heat, heat.return_pipes, "return", out);

  const auto& el = in.electric;
  std::set<std::string> bus_ids;
  for (const auto& b : el.buses) {
    if (!bus_ids.insert(b.id).second) out.push_back("duplicate bus id " + b.id);
    check_series(b.demand, n, "bus " + b.id + " demand", out);
  }
  if (!el.slack_bus.empty() && el.bus_index(el.slack_bus) < 0) out.push_back("unknown slack bus " + el.slack_bus);
  for (const auto& l : el.lines) {
    check_series(l.limit, n, "line " + l.id + " limit", out);
    if (l.limit.size() == n && (l.limit.array() <= 0.0).any()) out.push_back("line " + l.id + ": limit must be positive");
    if (l.shift_factors) {
      if (l.shift_factors->size() != static_cast<Eigen::Index>(el.buses.size()))
        out.push_back("line " + l.id + ": shift-factor dimension mismatch");
    } else {
      if (el.bus_index(l.from) < 0 || el.bus_index(l.to) < 0) out.push_back("line " + l.id + ": unknown endpoint");
      if (!(l.reactance > 0.0)) out.push_back("line " + l.id + ": reactance must be positive");
    }
  }
  if (out.empty() && !el.lines.empty()) {
    try {
      (void)shift_factors(el);
    } catch (const InputError& e) {
      out.push_back(e.what());
    }
  }

  std::set<std::string> src_ids;
  for (const auto& s : in.sources) {
    if (!src_ids.insert(s.id).second) out.push_back("duplicate source id " + s.id);
    if (!s.bus.empty() && el.bus_index(s.bus) < 0) out.push_back("source " + s.id + ": unknown bus " + s.bus);
    if (!s.heat_node.empty()) {
      const int k = heat.node_index(s.heat_node);
      if (k < 0) out.push_back("source " + s.id + ": unknown heat node " + s.heat_node);
      else if (heat.nodes[static_cast<std::size_t>(k)].kind != NodeKind::source)
        out.push_back("source " + s.id + ": heat node " + s.heat_node + " is not a source node");
    }
    if (s.eta.rows() != 6 || s.eta.cols() != n) {
      out.push_back("source " + s.id + ": cost coefficients must be 6 x N");
    } else {
      for (int t = 0; t < n; ++t) {
        const double e2 = s.eta(2, t), e4 = s.eta(4, t), e5 = s.eta(5, t);
        if (e2 < 0.0 || e4 < 0.0 || e2 * e4 - 0.25 * e5 * e5 < -1e-12 * (e2 * e4 + 0.25 * e5 * e5)) {
          out.push_back("source " + s.id + ": cost not convex at period " + std::to_string(t + 1));
          break;
        }
      }
    }
    if (s.ramp.down_e > s.ramp.up_e || s.ramp.down_h > s.ramp.up_h)
      out.push_back("source " + s.id + ": ramp down limit exceeds up limit");
    bool sizes_ok = true;
    for (const auto& r : s.polytope)
      if (r.v.size() != n) sizes_ok = false;
    if (s.renewable && s.renewable->available.size() != n) sizes_ok = false;
    if (!sizes_ok) {
      out.push_back("source " + s.id + ": polytope right-hand side must have N entries");
    } else {
      for (int t = 0; t < n; ++t) {
        const auto before = out.size();
        check_polytope(s, t, out);
        if (out.size() != before) break;
      }
    }
    if (s.renewable) {
      check_series(s.renewable->available, n, "source " + s.id + " availability", out);
      if (s.renewable->available.size() > 0 && s.renewable->available.minCoeff() < 0.0)
        out.push_back("source " + s.id + ": negative availability");
      if (s.renewable->curtailment_penalty < 0.0) out.push_back("source " + s.id + ": negative curtailment penalty");
    }
  }

  if (in.initial_profiles.size() != heat.pipe_count()) {
    out.push_back("initial temperatures: expected one profile per pipe");
  } else if (in.dx > 0.0) {
    for (std::size_t j = 0; j < heat.pipe_count(); ++j) {
      if (heat.pipe(j).length > 0.0 && in.initial_profiles[j].size() != in.segments(j) + 1)
        out.push_back("initial temperatures: pipe " + heat.pipe(j).id + " needs " +
                      std::to_string(in.segments(j) + 1) + " values");
    }
  }
  return rep;
}

std::vector<PolytopeRow> EnergySource::operating_rows() const {
  std::vector<PolytopeRow> rows = polytope;
  if (renewable) rows.push_back({1.0, 0.0, renewable->available});
  return rows;
}

}  // namespace chp
