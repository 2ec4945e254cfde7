#include "chp/subproblem.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace chp {

namespace {

using Eigen::Index;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

constexpr double kUnbounded = 1e299;

// Coefficient that is affine in the pipe flows: constant + sum w_q m_q.
struct Affine {
  double constant = 0.0;
  std::vector<std::pair<Index, double>> terms;

  Affine& add(Index q, double w) {
    terms.emplace_back(q, w);
    return *this;
  }
  Affine scaled(double s) const {
    Affine r{constant * s, terms};
    for (auto& [q, w] : r.terms) w *= s;
    return r;
  }
  Affine operator+(const Affine& o) const {
    Affine r = *this;
    r.constant += o.constant;
    r.terms.insert(r.terms.end(), o.terms.begin(), o.terms.end());
    return r;
  }
  double value(const VectorXd& m) const {
    double v = constant;
    for (const auto& [q, w] : terms) v += w * m[q];
    return v;
  }
};

class ProgramBuilder {
 public:
  explicit ProgramBuilder(const VectorXd& m) : m_(m) {}

  Index equality(Block block, RowKind kind, int period, std::string label, double rhs) {
    rows_.equalities.push_back({block, kind, period, std::move(label)});
    b_.push_back(rhs);
    return static_cast<Index>(b_.size()) - 1;
  }
  Index inequality(RowKind kind, int period, std::string label, double rhs) {
    rows_.inequalities.push_back({Block::g1, kind, period, std::move(label)});
    h_.push_back(rhs);
    return static_cast<Index>(h_.size()) - 1;
  }
  void eq(Index row, Index var, double v) {
    if (v != 0.0) a_.emplace_back(row, var, v);
  }
  void eq(Index row, Index var, const Affine& coef) {
    eq(row, var, coef.value(m_));
    for (const auto& [q, w] : coef.terms)
      if (w != 0.0) derivs_.push_back({row, var, q, w});
  }
  void ineq(Index row, Index var, double v) {
    if (v != 0.0) g_.emplace_back(row, var, v);
  }
  double& rhs(Index row) { return b_[static_cast<std::size_t>(row)]; }

  void finish(Subproblem& sub, Index n) {
    auto& qp = sub.program;
    qp.A.resize(static_cast<Index>(b_.size()), n);
    qp.A.setFromTriplets(a_.begin(), a_.end());
    qp.b = Eigen::Map<const VectorXd>(b_.data(), static_cast<Index>(b_.size()));
    qp.G.resize(static_cast<Index>(h_.size()), n);
    qp.G.setFromTriplets(g_.begin(), g_.end());
    qp.h = Eigen::Map<const VectorXd>(h_.data(), static_cast<Index>(h_.size()));
    sub.rows = std::move(rows_);
    sub.derivatives = std::move(derivs_);
  }

 private:
  const VectorXd& m_;
  std::vector<Triplet> a_, g_;
  std::vector<double> b_, h_;
  ConstraintBlocks rows_;
  std::vector<FlowDerivative> derivs_;
};

struct Topology {
  std::vector<std::vector<std::size_t>> supply_in, supply_out, return_in;
  std::vector<std::size_t> from;  // per pipe (flow-schedule order), node index
  std::vector<std::vector<std::size_t>> node_sources;
  std::vector<int> source_bus;
};

Topology topology(const DispatchInstance& in) {
  const auto& heat = in.heat;
  Topology tp;
  const std::size_t nn = heat.node_count(), ns = heat.supply_pipes.size();
  tp.supply_in.resize(nn);
  tp.supply_out.resize(nn);
  tp.return_in.resize(nn);
  tp.node_sources.resize(nn);
  for (std::size_t j = 0; j < heat.pipe_count(); ++j) {
    const auto& p = heat.pipe(j);
    const int f = heat.node_index(p.from), t = heat.node_index(p.to);
    if (f < 0 || t < 0) throw InputError("pipe " + p.id + " references an unknown node");
    tp.from.push_back(static_cast<std::size_t>(f));
    if (j < ns) {
      tp.supply_out[static_cast<std::size_t>(f)].push_back(j);
      tp.supply_in[static_cast<std::size_t>(t)].push_back(j);
    } else {
      tp.return_in[static_cast<std::size_t>(t)].push_back(j);
    }
  }
  for (std::size_t i = 0; i < in.sources.size(); ++i) {
    const auto& s = in.sources[i];
    if (!s.heat_node.empty()) {
      const int k = heat.node_index(s.heat_node);
      if (k < 0) throw InputError("source " + s.id + ": unknown heat node");
      tp.node_sources[static_cast<std::size_t>(k)].push_back(i);
    }
    tp.source_bus.push_back(s.bus.empty() ? -1 : in.electric.bus_index(s.bus));
  }
  return tp;
}

// Exchanger flow m^n of node k at period t as an affine form in the supply flows.
Affine exchanger_flow(const DispatchInstance& in, const Topology& tp, std::size_t k, int t) {
  const Index np = static_cast<Index>(in.heat.pipe_count());
  const double sign = in.heat.nodes[k].kind == NodeKind::load ? 1.0 : -1.0;
  Affine a;
  for (std::size_t j : tp.supply_in[k]) a.add(FlowSchedule::flat_index(static_cast<Index>(j), t, np), sign);
  for (std::size_t j : tp.supply_out[k]) a.add(FlowSchedule::flat_index(static_cast<Index>(j), t, np), -sign);
  return a;
}

Affine flow_sum(const DispatchInstance& in, const std::vector<std::size_t>& pipes, int t) {
  const Index np = static_cast<Index>(in.heat.pipe_count());
  Affine a;
  for (std::size_t j : pipes) a.add(FlowSchedule::flat_index(static_cast<Index>(j), t, np), 1.0);
  return a;
}

Affine flow(const DispatchInstance& in, std::size_t j, int t) {
  return Affine{}.add(FlowSchedule::flat_index(static_cast<Index>(j), t, static_cast<Index>(in.heat.pipe_count())),
                      1.0);
}

// Node mixing row. When nothing flows into the node the row pins
// its temperature to the previous period instead.
void mixing_row(ProgramBuilder& pb, const DispatchInstance& in, const VariableLayout& L, const VectorXd& m,
                RowKind kind, std::size_t k, int t, Index node_var, Index exch_var, const Affine& exch,
                const std::vector<std::size_t>& entering, bool supply) {
  const std::string side = supply ? "supply" : "return";
  const auto& node = in.heat.nodes[k];
  const Affine total = exch + flow_sum(in, entering, t);
  if (total.value(m) > 0.0) {
    const Index r = pb.equality(Block::h1, kind, t, side + " mixing " + node.id, 0.0);
    pb.eq(r, node_var, total);
    if (!exch.terms.empty()) pb.eq(r, exch_var, exch.scaled(-1.0));
    for (std::size_t j : entering) pb.eq(r, L.outlet(j, t), flow(in, j, t).scaled(-1.0));
    return;
  }
  const Index r = pb.equality(Block::h1, kind, t, side + " stagnant " + node.id, 0.0);
  pb.eq(r, node_var, 1.0);
  if (t > 0) pb.eq(r, supply ? L.node_supply(k, t - 1) : L.node_return(k, t - 1), -1.0);
  else pb.rhs(r) = initial_node_temperature(in, k, supply ? NetworkSide::supply : NetworkSide::ret);
}

void objective(Subproblem& sub, const DispatchInstance& in, const VariableLayout& L) {
  auto& qp = sub.program;
  const Index n = qp.variables();
  std::vector<Triplet> q;
  const double s = kPowerScale;
  for (std::size_t i = 0; i < in.sources.size(); ++i)
    for (int t = 0; t < in.periods; ++t) {
      const auto e = effective_cost(in.sources[i], t, in.dt);
      const Index p = L.p(i, t), h = L.h(i, t);
      qp.c0 += e[0];
      qp.c[p] += e[1] * s;
      qp.c[h] += e[3] * s;
      if (e[2] != 0.0) q.emplace_back(p, p, 2.0 * e[2] * s * s);
      if (e[4] != 0.0) q.emplace_back(h, h, 2.0 * e[4] * s * s);
      if (e[5] != 0.0) {
        q.emplace_back(p, h, e[5] * s * s);
        q.emplace_back(h, p, e[5] * s * s);
      }
    }
  qp.Q.resize(n, n);
  qp.Q.setFromTriplets(q.begin(), q.end());
}

Subproblem assemble(const DispatchInstance& in, const FlowSchedule& fs, const SubproblemOptions& opt) {
  check_flow_schedule(in, fs);
  Subproblem sub;
  sub.flows = fs;
  sub.layout = VariableLayout(in);
  const auto& L = sub.layout;
  const VectorXd m = fs.flat();
  const Topology tp = topology(in);
  const auto& heat = in.heat;
  const std::size_t nn = heat.node_count(), np = heat.pipe_count(), nsrc = in.sources.size();
  const Eigen::MatrixXd sf = shift_factors(in.electric);
  const double S = kPowerScale, dt = in.dt;
  ProgramBuilder pb(m);

  for (int t = 0; t < in.periods; ++t) {
    std::vector<Affine> mn(nn);
    for (std::size_t k = 0; k < nn; ++k) mn[k] = exchanger_flow(in, tp, k, t);

    for (std::size_t k = 0; k < nn; ++k) {
      const bool source = heat.nodes[k].kind == NodeKind::source;
      mixing_row(pb, in, L, m, RowKind::supply_mixing, k, t, L.node_supply(k, t), L.exchanger_supply(k, t), source ? mn[k] : Affine{},
                 tp.supply_in[k], true);
    }
    for (std::size_t k = 0; k < nn; ++k) {
      const bool load = heat.nodes[k].kind == NodeKind::load;
      mixing_row(pb, in, L, m, RowKind::return_mixing, k, t, L.node_return(k, t), L.exchanger_return(k, t), load ? mn[k] : Affine{},
                 tp.return_in[k], false);
    }
    for (std::size_t k = 0; k < nn; ++k) {
      const auto& node = heat.nodes[k];
      const bool load = node.kind == NodeKind::load;
      const double demand = load ? node.demand[t] : 0.0;
      if (load && mn[k].value(m) <= 0.0) {
        // No exchange: the exchanger passes the supply temperature through.
        const Index r = pb.equality(Block::h1, RowKind::node_heat, t, "idle exchanger " + node.id, 0.0);
        pb.eq(r, L.exchanger_return(k, t), 1.0);
        pb.eq(r, L.exchanger_supply(k, t), -1.0);
        continue;
      }
      const Index r = pb.equality(Block::h1, RowKind::node_heat, t, "node heat " + node.id, demand / S);
      const Affine w = mn[k].scaled(in.cp / S);
      pb.eq(r, L.exchanger_supply(k, t), w);
      pb.eq(r, L.exchanger_return(k, t), w.scaled(-1.0));
      for (std::size_t i : tp.node_sources[k]) pb.eq(r, L.h(i, t), -1.0);
    }
    for (int side = 0; side < 2; ++side) {
      const std::size_t lo = side == 0 ? 0 : heat.supply_pipes.size();
      const std::size_t hi = side == 0 ? heat.supply_pipes.size() : np;
      for (std::size_t j = lo; j < hi; ++j) {
        const auto k = pipe_coefficients(heat.pipe(j), dt, in.pipe_dx(j), in.rho, in.cp, t);
        const Affine bm = flow(in, j, t).scaled(k.b * dt);
        const Affine lhs = opt.scheme == ThermalScheme::implicit_upwind
                               ? Affine{k.a * dt, {}} + bm
                               : Affine{k.b * dt, {}} + flow(in, j, t).scaled(k.a * dt);
        const int s = in.segments(j);
        for (int i = 1; i <= s; ++i) {
          const Index r = pb.equality(Block::h1, side == 0 ? RowKind::supply_pipe : RowKind::return_pipe, t,
                                      "pipe " + heat.pipe(j).id + " segment " + std::to_string(i), k.d * dt);
          pb.eq(r, L.segment(j, i, t), lhs);
          pb.eq(r, L.segment(j, i - 1, t), bm.scaled(-1.0));
          if (t > 0) pb.eq(r, L.segment(j, i, t - 1), -k.c * dt);
          else pb.rhs(r) += k.c * dt * in.initial_profiles[j][i];
        }
      }
    }
    for (std::size_t j = 0; j < np; ++j) {
      const bool supply = j < heat.supply_pipes.size();
      const Index r = pb.equality(Block::h2, supply ? RowKind::supply_inlet : RowKind::return_inlet, t, "pipe inlet " + heat.pipe(j).id, 0.0);
      pb.eq(r, L.inlet(j, t), 1.0);
      pb.eq(r, supply ? L.node_supply(tp.from[j], t) : L.node_return(tp.from[j], t), -1.0);
    }

    const Index bal = pb.equality(Block::h2, RowKind::power_balance, t, "power balance", 0.0);
    for (const auto& b : in.electric.buses) pb.rhs(bal) += b.demand[t] / S;
    for (std::size_t i = 0; i < nsrc; ++i)
      if (tp.source_bus[i] >= 0) pb.eq(bal, L.p(i, t), 1.0);
    for (std::size_t l = 0; l < in.electric.lines.size(); ++l) {
      const auto li = static_cast<Index>(l);
      double rhs = 0.0;
      for (std::size_t b = 0; b < in.electric.buses.size(); ++b)
        rhs -= sf(li, static_cast<Index>(b)) * in.electric.buses[b].demand[t] / S;
      const Index r = pb.equality(Block::h2, RowKind::line_flow, t, "line flow " + in.electric.lines[l].id, rhs);
      pb.eq(r, L.line(l, t), 1.0);
      for (std::size_t i = 0; i < nsrc; ++i)
        if (tp.source_bus[i] >= 0) pb.eq(r, L.p(i, t), -sf(li, tp.source_bus[i]));
    }

    for (std::size_t j = 0; j < np; ++j) {
      const Index r0 = pb.equality(Block::h2, RowKind::identity, t, "inlet boundary " + heat.pipe(j).id, 0.0);
      pb.eq(r0, L.segment(j, 0, t), 1.0);
      pb.eq(r0, L.inlet(j, t), -1.0);
      const Index r1 = pb.equality(Block::h2, RowKind::identity, t, "outlet boundary " + heat.pipe(j).id, 0.0);
      pb.eq(r1, L.segment(j, in.segments(j), t), 1.0);
      pb.eq(r1, L.outlet(j, t), -1.0);
    }
    for (std::size_t k = 0; k < nn; ++k) {
      const bool load = heat.nodes[k].kind == NodeKind::load;
      const Index r = pb.equality(Block::h2, RowKind::identity, t, (load ? "load supply " : "source return ") + heat.nodes[k].id, 0.0);
      pb.eq(r, load ? L.node_supply(k, t) : L.node_return(k, t), 1.0);
      pb.eq(r, load ? L.exchanger_supply(k, t) : L.exchanger_return(k, t), -1.0);
    }
    for (std::size_t i = 0; i < nsrc; ++i) {
      if (tp.source_bus[i] < 0) pb.eq(pb.equality(Block::h2, RowKind::identity, t, "no bus " + in.sources[i].id, 0.0), L.p(i, t), 1.0);
      if (in.sources[i].heat_node.empty())
        pb.eq(pb.equality(Block::h2, RowKind::identity, t, "no heat " + in.sources[i].id, 0.0), L.h(i, t), 1.0);
    }

    for (std::size_t l = 0; l < in.electric.lines.size(); ++l) {
      const auto& line = in.electric.lines[l];
      const double lim = line.limit[t] / S;
      pb.ineq(pb.inequality(RowKind::line_limit, t, "line max " + line.id, lim), L.line(l, t), 1.0);
      pb.ineq(pb.inequality(RowKind::line_limit, t, "line min " + line.id, lim), L.line(l, t), -1.0);
    }
    for (std::size_t i = 0; i < nsrc; ++i) {
      const auto& src = in.sources[i];
      const auto region = src.operating_rows();
      for (std::size_t r = 0; r < region.size(); ++r) {
        const auto& row = region[r];
        const Index g = pb.inequality(RowKind::operating_region, t, "polytope " + src.id + " " + std::to_string(r), row.v[t] / S);
        pb.ineq(g, L.p(i, t), row.B);
        pb.ineq(g, L.h(i, t), row.K);
      }
    }
    if (t > 0) {
      for (std::size_t i = 0; i < nsrc; ++i) {
        const auto& src = in.sources[i];
        const auto ramp = [&](RowKind eq, Index cur, Index prev, double up, double down, const char* what) {
          if (up < kUnbounded) {
            const Index g = pb.inequality(eq, t, std::string(what) + " ramp up " + src.id, up * dt / S);
            pb.ineq(g, cur, 1.0);
            pb.ineq(g, prev, -1.0);
          }
          if (down > -kUnbounded) {
            const Index g = pb.inequality(eq, t, std::string(what) + " ramp down " + src.id, -down * dt / S);
            pb.ineq(g, cur, -1.0);
            pb.ineq(g, prev, 1.0);
          }
        };
        ramp(RowKind::electric_ramp, L.p(i, t), L.p(i, t - 1), src.ramp.up_e, src.ramp.down_e, "electric");
        ramp(RowKind::heat_ramp, L.h(i, t), L.h(i, t - 1), src.ramp.up_h, src.ramp.down_h, "heat");
      }
    }
    for (std::size_t k = 0; k < nn; ++k) {
      const auto& node = heat.nodes[k];
      const auto box = [&](const std::optional<Interval>& iv, Index var, const char* what) {
        if (!iv) return;
        pb.ineq(pb.inequality(RowKind::temperature_bound, t, std::string(what) + " max " + node.id, iv->hi), var, 1.0);
        pb.ineq(pb.inequality(RowKind::temperature_bound, t, std::string(what) + " min " + node.id, -iv->lo), var, -1.0);
      };
      box(node.supply_temp, L.exchanger_supply(k, t), "supply temperature");
      box(node.return_temp, L.exchanger_return(k, t), "return temperature");
    }
  }

  double load_energy = 0.0;
  for (const auto& node : heat.nodes)
    if (node.kind == NodeKind::load) load_energy += node.demand.sum();
  const Index adequacy = pb.inequality(RowKind::heat_adequacy, -1, "heat adequacy", -load_energy / S);
  for (std::size_t i = 0; i < nsrc; ++i)
    if (!in.sources[i].heat_node.empty())
      for (int t = 0; t < in.periods; ++t) pb.ineq(adequacy, L.h(i, t), -1.0);

  const Index n = L.size();
  pb.finish(sub, n);
  sub.program.c = VectorXd::Zero(n);
  sub.program.variable_names.reserve(static_cast<std::size_t>(n));
  for (Index v = 0; v < n; ++v) sub.program.variable_names.push_back(L.name(v));
  for (const auto& r : sub.rows.equalities) sub.program.equality_names.push_back(r.label);
  for (const auto& r : sub.rows.inequalities) sub.program.inequality_names.push_back(r.label);
  return sub;
}

}  // namespace

VariableLayout::VariableLayout(const DispatchInstance& in)
    : ns_(static_cast<Index>(in.sources.size())),
      nl_(static_cast<Index>(in.electric.lines.size())),
      nn_(static_cast<Index>(in.heat.node_count())),
      nps_(static_cast<Index>(in.heat.supply_pipes.size())),
      npr_(static_cast<Index>(in.heat.return_pipes.size())),
      periods_(in.periods) {
  node_off_ = 2 * ns_ + nl_;
  pipe_off_ = node_off_ + 4 * nn_;
  Index off = pipe_off_ + 2 * (nps_ + npr_);
  for (std::size_t j = 0; j < in.heat.pipe_count(); ++j) {
    seg_off_.push_back(off);
    seg_count_.push_back(in.segments(j));
    off += in.segments(j) + 1;
    pipe_ids_.push_back(in.heat.pipe(j).id);
  }
  per_period_ = off;
  for (const auto& s : in.sources) source_ids_.push_back(s.id);
  for (const auto& l : in.electric.lines) line_ids_.push_back(l.id);
  for (const auto& k : in.heat.nodes) node_ids_.push_back(k.id);
}

Index VariableLayout::inlet(std::size_t j, int t) const {
  const auto jj = idx(j);
  return base(t) + pipe_off_ + (jj < nps_ ? jj : 2 * nps_ + (jj - nps_));
}

Index VariableLayout::outlet(std::size_t j, int t) const {
  const auto jj = idx(j);
  return base(t) + pipe_off_ + (jj < nps_ ? nps_ + jj : 2 * nps_ + npr_ + (jj - nps_));
}

std::string VariableLayout::name(Index var) const {
  if (per_period_ == 0) return "x" + std::to_string(var);
  const Index t = var / per_period_, r = var % per_period_;
  const std::string tag = "_" + std::to_string(t + 1);
  const auto pick = [&](const char* prefix, const std::vector<std::string>& ids, Index i) {
    return std::string(prefix) + "[" + ids[static_cast<std::size_t>(i)] + "]" + tag;
  };
  if (r < ns_) return pick("p", source_ids_, r);
  if (r < 2 * ns_) return pick("h", source_ids_, r - ns_);
  if (r < node_off_) return pick("l", line_ids_, r - 2 * ns_);
  if (r < pipe_off_) {
    static const char* names[] = {"TexS", "TexR", "TS", "TR"};
    const Index q = r - node_off_;
    return pick(names[q / nn_], node_ids_, q % nn_);
  }
  const Index q = r - pipe_off_;
  if (q < nps_) return pick("tauSI", pipe_ids_, q);
  if (q < 2 * nps_) return pick("tauSO", pipe_ids_, q - nps_);
  if (q < 2 * nps_ + npr_) return pick("tauRI", pipe_ids_, nps_ + q - 2 * nps_);
  if (q < 2 * (nps_ + npr_)) return pick("tauRO", pipe_ids_, nps_ + q - 2 * nps_ - npr_);
  std::size_t j = seg_off_.size() - 1;
  while (j > 0 && seg_off_[j] > r) --j;
  return "tau[" + pipe_ids_[j] + "," + std::to_string(r - seg_off_[j]) + "]" + tag;
}

std::size_t ConstraintBlocks::count(Block b) const {
  const auto& v = b == Block::g1 ? inequalities : equalities;
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [&](const RowInfo& r) { return r.block == b; }));
}

std::size_t ConstraintBlocks::count(Block b, RowKind kind) const {
  const auto& v = b == Block::g1 ? inequalities : equalities;
  return static_cast<std::size_t>(
      std::count_if(v.begin(), v.end(), [&](const RowInfo& r) { return r.block == b && r.kind == kind; }));
}

Eigen::Matrix<double, 6, 1> effective_cost(const EnergySource& src, int t, double dt) {
  Eigen::Matrix<double, 6, 1> e = src.eta.col(t);
  if (src.renewable && src.renewable->curtailment_penalty != 0.0) {
    const double w = src.renewable->curtailment_penalty * dt / 3600.0;
    e[0] += w * src.renewable->available[t];
    e[1] -= w;
  }
  return e;
}

void check_flow_schedule(const DispatchInstance& in, const FlowSchedule& m) {
  if (m.pipes() != static_cast<Index>(in.heat.pipe_count()) || m.periods() != in.periods)
    throw InputError("flow schedule must be pipes x N");
  for (std::size_t j = 0; j < in.heat.pipe_count(); ++j) {
    const auto& p = in.heat.pipe(j);
    for (int t = 0; t < in.periods; ++t) {
      const double v = m(static_cast<Index>(j), t);
      const double tol = 1e-9 * (1.0 + std::abs(p.flow_max[t]));
      if (!std::isfinite(v) || v < 0.0 || v < p.flow_min[t] - tol || v > p.flow_max[t] + tol)
        throw InputError("flow of pipe " + p.id + " in period " + std::to_string(t + 1) + " is outside its bounds");
    }
  }
}

Subproblem build_subproblem(const DispatchInstance& in, const FlowSchedule& m, const SubproblemOptions& opt) {
  Subproblem sub = assemble(in, m, opt);
  objective(sub, in, sub.layout);
  return sub;
}

Subproblem build_relaxed_subproblem(const DispatchInstance& in, const FlowSchedule& m, const SubproblemOptions& opt) {
  Subproblem sub = assemble(in, m, opt);
  auto& qp = sub.program;
  const Index n = sub.layout.size(), mg = qp.inequalities();
  qp.Q.resize(n + mg, n + mg);
  qp.c = VectorXd::Zero(n + mg);
  qp.c.tail(mg).setOnes();
  qp.A.conservativeResize(qp.equalities(), n + mg);

  std::vector<Triplet> g;
  for (Index k = 0; k < qp.G.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(qp.G, k); it; ++it) g.emplace_back(it.row(), it.col(), it.value());
  for (Index r = 0; r < mg; ++r) {
    g.emplace_back(r, n + r, -1.0);
    g.emplace_back(mg + r, n + r, -1.0);
  }
  qp.G.resize(2 * mg, n + mg);
  qp.G.setFromTriplets(g.begin(), g.end());
  qp.h.conservativeResize(2 * mg);
  qp.h.tail(mg).setZero();
  for (Index r = 0; r < mg; ++r) {
    const auto& label = sub.rows.inequalities[static_cast<std::size_t>(r)].label;
    qp.variable_names.push_back("s[" + label + "]");
    qp.inequality_names.push_back("slack " + label);
  }
  sub.relaxed = true;
  return sub;
}

SystemState extract_state(const DispatchInstance& in, const VariableLayout& L, const VectorXd& x) {
  SystemState st;
  const auto n = in.periods;
  const auto ns = static_cast<Index>(in.sources.size()), nl = static_cast<Index>(in.electric.lines.size()),
             nn = static_cast<Index>(in.heat.node_count()), np = static_cast<Index>(in.heat.pipe_count());
  st.p.resize(ns, n);
  st.h.resize(ns, n);
  st.line_flow.resize(nl, n);
  for (auto* mat : {&st.exchanger_supply, &st.exchanger_return, &st.node_supply, &st.node_return}) mat->resize(nn, n);
  st.pipe_inlet.resize(np, n);
  st.pipe_outlet.resize(np, n);
  for (Index j = 0; j < np; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    st.pipe_temps.emplace_back(in.segments(jj) + 1, n + 1);
    st.pipe_temps.back().col(0) = in.initial_profiles[jj];
  }
  for (int t = 0; t < n; ++t) {
    for (Index i = 0; i < ns; ++i) {
      st.p(i, t) = x[L.p(static_cast<std::size_t>(i), t)] * kPowerScale;
      st.h(i, t) = x[L.h(static_cast<std::size_t>(i), t)] * kPowerScale;
    }
    for (Index l = 0; l < nl; ++l) st.line_flow(l, t) = x[L.line(static_cast<std::size_t>(l), t)] * kPowerScale;
    for (Index k = 0; k < nn; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      st.exchanger_supply(k, t) = x[L.exchanger_supply(kk, t)];
      st.exchanger_return(k, t) = x[L.exchanger_return(kk, t)];
      st.node_supply(k, t) = x[L.node_supply(kk, t)];
      st.node_return(k, t) = x[L.node_return(kk, t)];
    }
    for (Index j = 0; j < np; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      st.pipe_inlet(j, t) = x[L.inlet(jj, t)];
      st.pipe_outlet(j, t) = x[L.outlet(jj, t)];
      for (Index i = 0; i < st.pipe_temps[jj].rows(); ++i)
        st.pipe_temps[jj](i, t + 1) = x[L.segment(jj, static_cast<int>(i), t)];
    }
  }
  return st;
}

SubproblemResult solve_subproblem(const Subproblem& sub, const SubproblemOptions& opt) {
  SubproblemResult res;
  const QpSolution sol = solve_qp(sub.program, opt.qp);
  res.qp_iterations = sol.iterations;
  res.polished = sol.polished;
  if (sol.status != QpStatus::optimal) return res;
  res.status = SubproblemStatus::optimal;
  res.x = sol.x;
  res.objective = sol.objective;
  res.eq_duals = sol.y;
  const Index mg = static_cast<Index>(sub.rows.inequalities.size());
  res.ineq_duals = sol.z.head(mg);
  if (sub.relaxed) res.relaxed_objective = kPowerScale * sol.x.tail(mg).cwiseMax(0.0).sum();
  return res;
}

Eigen::MatrixXd envelope_gradient(const Subproblem& sub, const SubproblemResult& res) {
  if (res.status != SubproblemStatus::optimal || res.eq_duals.size() != sub.program.equalities())
    throw std::logic_error("envelope_gradient: needs an optimal primal-dual pair");
  VectorXd g = VectorXd::Zero(sub.flows.size());
  for (const auto& d : sub.derivatives) g[d.flow] += res.eq_duals[d.row] * d.value * res.x[d.var];
  return FlowSchedule::from_flat(g, sub.flows.pipes()).matrix();
}

CutPlane generate_cut(const Subproblem& relaxed, const SubproblemResult& rr) {
  if (!relaxed.relaxed) throw std::logic_error("generate_cut: expects the relaxed program");
  const Index n = relaxed.layout.size(), mg = static_cast<Index>(relaxed.rows.inequalities.size());
  CutPlane cut;
  cut.origin = relaxed.flows.flat();
  cut.normal = VectorXd::Zero(cut.origin.size());
  for (const auto& d : relaxed.derivatives) cut.normal[d.flow] += rr.eq_duals[d.row] * d.value * rr.x[d.var];
  const VectorXd g1 = relaxed.program.G.topLeftCorner(mg, n) * rr.x.head(n) - relaxed.program.h.head(mg);
  cut.normal *= kPowerScale;
  cut.violation = kPowerScale * rr.ineq_duals.dot(g1);
  if (!(cut.violation > 0.0)) throw std::logic_error("generate_cut: relaxed optimum shows no violation");
  cut.bound = cut.normal.dot(cut.origin) - cut.violation;
  return cut;
}

SubproblemResult evaluate_flow(const DispatchInstance& in, const FlowSchedule& m, const SubproblemOptions& opt) {
  const Subproblem sub = build_subproblem(in, m, opt);
  SubproblemResult res = solve_subproblem(sub, opt);
  if (res.status == SubproblemStatus::optimal) {
    res.state = extract_state(in, sub.layout, res.x);
    res.gradient = envelope_gradient(sub, res);
    return res;
  }
  const Subproblem rel = build_relaxed_subproblem(in, m, opt);
  SubproblemResult rr = solve_subproblem(rel, opt);
  res.relaxed_objective = rr.relaxed_objective;
  if (rr.status != SubproblemStatus::optimal) return res;
  if (rr.relaxed_objective <= opt.infeasibility_threshold) {
    // Feasible after all: retry with a longer iteration budget.
    SubproblemOptions longer = opt;
    longer.qp.max_iterations = 4 * opt.qp.max_iterations;
    SubproblemResult again = solve_subproblem(sub, longer);
    if (again.status == SubproblemStatus::optimal) {
      again.state = extract_state(in, sub.layout, again.x);
      again.gradient = envelope_gradient(sub, again);
    }
    return again;
  }
  res.status = SubproblemStatus::infeasible;
  res.x = rr.x.head(rel.layout.size());
  res.state = extract_state(in, rel.layout, res.x);
  res.eq_duals = rr.eq_duals;
  res.ineq_duals = rr.ineq_duals;
  res.cuts.push_back(generate_cut(rel, rr));
  return res;
}

}  // namespace chp
