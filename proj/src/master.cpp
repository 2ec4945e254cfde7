#include "chp/master.hpp"
#include "chp/io.hpp"

#include "chp/qp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>

namespace chp {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kRankTolerance = 1e-10;

bool near_bound(double v, double bound, double tol) { return std::abs(v - bound) <= tol * (1.0 + std::abs(bound)); }

double cut_residual(const CutPlane& c, const VectorXd& m) {
  const double w = c.normal.norm();
  return w > 0.0 ? (c.bound - c.normal.dot(m)) / w : std::numeric_limits<double>::infinity();
}

// Snap coordinates that sit on (or numerically past) a box bound onto it.
void snap(const FlowSet& set, VectorXd& m) {
  for (Index i = 0; i < m.size(); ++i) {
    if (m[i] <= set.lower[i] || near_bound(m[i], set.lower[i], 1e-12)) m[i] = set.lower[i];
    if (m[i] >= set.upper[i] || near_bound(m[i], set.upper[i], 1e-12)) m[i] = set.upper[i];
  }
}

// Rows of G and E grouped by the period whose flows they touch. Every row of M
// touches a single period; cuts may couple periods.
struct PeriodRows {
  std::vector<std::vector<Index>> eq, ineq;
};

PeriodRows group_rows(const FlowSet& set, Index pipes) {
  const Index n = pipes == 0 ? 0 : set.size() / pipes;
  PeriodRows pr;
  pr.eq.resize(static_cast<std::size_t>(n));
  pr.ineq.resize(static_cast<std::size_t>(n));
  auto period_of = [&](const MatrixXd& rows, Index r) {
    Index i = 0;
    rows.row(r).cwiseAbs().maxCoeff(&i);
    return i / pipes;
  };
  for (Index r = 0; r < set.equalities.rows(); ++r) pr.eq[static_cast<std::size_t>(period_of(set.equalities, r))].push_back(r);
  for (Index r = 0; r < set.inequalities.rows(); ++r)
    pr.ineq[static_cast<std::size_t>(period_of(set.inequalities, r))].push_back(r);
  return pr;
}

// Orthogonal projector onto null(H') for an active set, applied blockwise per period
// and then against the (projected) cut normals.
class Projector {
 public:
  Projector(const FlowSet& set, const ActiveSet& act, Index pipes) : set_(set), act_(act) {
    const Index n = set.size();
    fixed_ = std::vector<int>(static_cast<std::size_t>(n), 0);
    for (Index i : act.lower) fixed_[static_cast<std::size_t>(i)] = -1;
    for (Index i : act.upper) fixed_[static_cast<std::size_t>(i)] = 1;
    const PeriodRows pr = group_rows(set, pipes);
    std::vector<char> row_active(static_cast<std::size_t>(set.inequalities.rows()), 0);
    for (Index r : act.rows) row_active[static_cast<std::size_t>(r)] = 1;
    const Index periods = pipes == 0 ? 0 : n / pipes;
    blocks_.resize(static_cast<std::size_t>(periods));
    for (Index t = 0; t < periods; ++t) {
      auto& b = blocks_[static_cast<std::size_t>(t)];
      for (Index j = 0; j < pipes; ++j)
        if (!fixed_[static_cast<std::size_t>(t * pipes + j)]) b.free.push_back(t * pipes + j);
      for (Index r : pr.eq[static_cast<std::size_t>(t)]) b.cols.push_back({false, r});
      for (Index r : pr.ineq[static_cast<std::size_t>(t)])
        if (row_active[static_cast<std::size_t>(r)]) b.cols.push_back({true, r});
      b.h.resize(static_cast<Index>(b.free.size()), static_cast<Index>(b.cols.size()));
      for (std::size_t c = 0; c < b.cols.size(); ++c) {
        const MatrixXd& src = b.cols[c].first ? set.inequalities : set.equalities;
        for (std::size_t f = 0; f < b.free.size(); ++f) b.h(static_cast<Index>(f), static_cast<Index>(c)) = src(b.cols[c].second, b.free[f]);
      }
      if (b.h.size() > 0) {
        b.qr.setThreshold(kRankTolerance);
        b.qr.compute(b.h);
        b.q = b.qr.householderQ() * MatrixXd::Identity(b.h.rows(), b.qr.rank());
      }
    }
    cuts_.resize(n, static_cast<Index>(act.cuts.size()));
    for (std::size_t c = 0; c < act.cuts.size(); ++c) {
      const auto& w = set.cuts[static_cast<std::size_t>(act.cuts[c])].normal;
      cuts_.col(static_cast<Index>(c)) = base(w / w.norm());
    }
    if (cuts_.cols() > 0) {
      cut_qr_.setThreshold(kRankTolerance);
      cut_qr_.compute(cuts_);
      cut_q_ = cut_qr_.householderQ() * MatrixXd::Identity(n, cut_qr_.rank());
    }
  }

  VectorXd apply(const VectorXd& v) const {
    VectorXd p = base(v);
    if (cut_q_.cols() > 0) p -= cut_q_ * (cut_q_.transpose() * p);
    return p;
  }

  // Multipliers u with -g = -Pg + H u; returns one value per active constraint in
  // the order lower, upper, rows, cuts. Normals point out of M.
  VectorXd multipliers(const VectorXd& g, const VectorXd& pg) const {
    VectorXd r = pg - g;
    VectorXd u_cut = VectorXd::Zero(cuts_.cols());
    if (cuts_.cols() > 0) {
      u_cut = cut_qr_.solve(pg - base(g));
      for (std::size_t c = 0; c < act_.cuts.size(); ++c) {
        const auto& w = set_.cuts[static_cast<std::size_t>(act_.cuts[c])].normal;
        r -= u_cut[static_cast<Index>(c)] * w / w.norm();
      }
    }
    VectorXd u_row = VectorXd::Zero(set_.inequalities.rows());
    for (const auto& b : blocks_) {
      if (b.h.cols() == 0) continue;
      VectorXd rf(static_cast<Index>(b.free.size()));
      for (std::size_t f = 0; f < b.free.size(); ++f) rf[static_cast<Index>(f)] = r[b.free[f]];
      const VectorXd u = b.h.rows() > 0 ? VectorXd(b.qr.solve(rf)) : VectorXd::Zero(b.h.cols());
      for (std::size_t c = 0; c < b.cols.size(); ++c) {
        const MatrixXd& src = b.cols[c].first ? set_.inequalities : set_.equalities;
        r -= u[static_cast<Index>(c)] * src.row(b.cols[c].second).transpose();
        if (b.cols[c].first) u_row[b.cols[c].second] = u[static_cast<Index>(c)];
      }
    }
    VectorXd out(static_cast<Index>(act_.size()));
    Index o = 0;
    for (Index i : act_.lower) out[o++] = -r[i];
    for (Index i : act_.upper) out[o++] = r[i];
    for (Index row : act_.rows) out[o++] = u_row[row];
    for (Index c = 0; c < u_cut.size(); ++c) out[o++] = u_cut[c];
    return out;
  }

 private:
  struct Block {
    std::vector<Index> free;
    std::vector<std::pair<bool, Index>> cols;  // (is inequality, row)
    MatrixXd h, q;
    Eigen::ColPivHouseholderQR<MatrixXd> qr;
  };

  VectorXd base(const VectorXd& v) const {
    VectorXd p = VectorXd::Zero(v.size());
    for (const auto& b : blocks_) {
      VectorXd vf(static_cast<Index>(b.free.size()));
      for (std::size_t f = 0; f < b.free.size(); ++f) vf[static_cast<Index>(f)] = v[b.free[f]];
      if (b.q.cols() > 0) vf -= b.q * (b.q.transpose() * vf);
      for (std::size_t f = 0; f < b.free.size(); ++f) p[b.free[f]] = vf[static_cast<Index>(f)];
    }
    return p;
  }

  const FlowSet& set_;
  const ActiveSet& act_;
  std::vector<int> fixed_;
  std::vector<Block> blocks_;
  MatrixXd cuts_, cut_q_;
  Eigen::ColPivHouseholderQR<MatrixXd> cut_qr_;
};

}  // namespace

double FlowSet::violation(const VectorXd& m) const {
  double v = 0.0;
  v = std::max(v, (lower - m).maxCoeff());
  v = std::max(v, (m - upper).maxCoeff());
  if (equalities.rows() > 0) v = std::max(v, (equalities * m).cwiseAbs().maxCoeff());
  if (inequalities.rows() > 0) v = std::max(v, (inequalities * m - rhs).maxCoeff());
  for (const auto& c : cuts) v = std::max(v, -cut_residual(c, m));
  return std::max(v, 0.0);
}

FlowSet flow_set(const DispatchInstance& in) {
  const auto& heat = in.heat;
  const Index np = static_cast<Index>(heat.pipe_count()), ns = static_cast<Index>(heat.supply_pipes.size());
  const Index nn = static_cast<Index>(heat.node_count()), n = in.periods;
  FlowSet set;
  set.pipes = np;
  set.lower.resize(np * n);
  set.upper.resize(np * n);
  for (Index j = 0; j < np; ++j)
    for (Index t = 0; t < n; ++t) {
      const auto& p = heat.pipe(static_cast<std::size_t>(j));
      set.lower[FlowSchedule::flat_index(j, t, np)] = p.flow_min[t];
      set.upper[FlowSchedule::flat_index(j, t, np)] = p.flow_max[t];
    }

  const MatrixXd as = heat.incidence(NetworkSide::supply), ar = heat.incidence(NetworkSide::ret);
  // Consistency: water leaving a node on the supply side returns on the return side.
  MatrixXd node_rows(nn, np);
  node_rows << as, ar;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(node_rows.transpose());
  qr.setThreshold(kRankTolerance);
  std::vector<Index> independent;
  for (Index r = 0; r < qr.rank(); ++r) independent.push_back(qr.colsPermutation().indices()[r]);
  std::sort(independent.begin(), independent.end());

  set.equalities = MatrixXd::Zero(static_cast<Index>(independent.size()) * n, np * n);
  Index e = 0;
  for (Index t = 0; t < n; ++t)
    for (Index k : independent) {
      const VectorXd row = node_rows.row(k).transpose().normalized();
      set.equalities.block(e++, t * np, 1, np) = row.transpose();
    }

  std::vector<std::pair<Eigen::RowVectorXd, double>> rows;
  for (Index k = 0; k < nn; ++k) {
    const auto& node = heat.nodes[static_cast<std::size_t>(k)];
    if (!node.exchanger_flow) continue;
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(np);
    a.head(ns) = (node.kind == NodeKind::load ? 1.0 : -1.0) * as.row(k).head(ns);
    const double norm = a.norm();
    if (norm == 0.0) continue;
    for (Index t = 0; t < n; ++t) {
      Eigen::RowVectorXd full = Eigen::RowVectorXd::Zero(np * n);
      full.segment(t * np, np) = a / norm;
      rows.emplace_back(full, node.exchanger_flow->hi / norm);
      rows.emplace_back(-full, -node.exchanger_flow->lo / norm);
    }
  }
  set.inequalities.resize(static_cast<Index>(rows.size()), np * n);
  set.rhs.resize(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    set.inequalities.row(static_cast<Index>(r)) = rows[r].first;
    set.rhs[static_cast<Index>(r)] = rows[r].second;
  }
  return set;
}

VectorXd project_onto(const FlowSet& set, const VectorXd& m) {
  const Index n = set.size();
  QuadraticProgram qp;
  qp.Q.resize(n, n);
  qp.Q.setIdentity();
  qp.c = -m;
  qp.A = set.equalities.sparseView();
  qp.b = VectorXd::Zero(set.equalities.rows());
  const Index mi = set.inequalities.rows(), mc = static_cast<Index>(set.cuts.size());
  std::vector<Eigen::Triplet<double>> trip;
  VectorXd h(2 * n + mi + mc);
  for (Index i = 0; i < n; ++i) {
    trip.emplace_back(i, i, 1.0);
    trip.emplace_back(n + i, i, -1.0);
    h[i] = set.upper[i];
    h[n + i] = -set.lower[i];
  }
  for (Index r = 0; r < mi; ++r) {
    for (Index i = 0; i < n; ++i)
      if (set.inequalities(r, i) != 0.0) trip.emplace_back(2 * n + r, i, set.inequalities(r, i));
    h[2 * n + r] = set.rhs[r];
  }
  for (Index c = 0; c < mc; ++c) {
    const auto& cut = set.cuts[static_cast<std::size_t>(c)];
    const double w = cut.normal.norm();
    for (Index i = 0; i < n; ++i)
      if (cut.normal[i] != 0.0) trip.emplace_back(2 * n + mi + c, i, cut.normal[i] / w);
    h[2 * n + mi + c] = cut.bound / w;
  }
  qp.G.resize(h.size(), n);
  qp.G.setFromTriplets(trip.begin(), trip.end());
  qp.h = h;
  const QpSolution sol = solve_qp(qp);
  if (sol.status != QpStatus::optimal) throw InputError("admissible flow set is empty");
  VectorXd out = sol.x;
  snap(set, out);
  return out;
}

ActiveSet active_constraints(const FlowSet& set, const VectorXd& m, double tol) {
  ActiveSet a;
  for (Index i = 0; i < m.size(); ++i) {
    if (m[i] <= set.lower[i] || near_bound(m[i], set.lower[i], tol)) a.lower.push_back(i);
    else if (m[i] >= set.upper[i] || near_bound(m[i], set.upper[i], tol)) a.upper.push_back(i);
  }
  for (Index r = 0; r < set.inequalities.rows(); ++r)
    if (set.rhs[r] - set.inequalities.row(r).dot(m) <= tol * (1.0 + std::abs(set.rhs[r]))) a.rows.push_back(r);
  for (std::size_t c = 0; c < set.cuts.size(); ++c) {
    const auto& cut = set.cuts[c];
    const double w = cut.normal.norm();
    if (w > 0.0 && cut_residual(cut, m) <= tol * (1.0 + std::abs(cut.bound) / w)) a.cuts.push_back(static_cast<Index>(c));
  }
  return a;
}

MatrixXd projection_matrix(const MatrixXd& h) {
  const Index n = h.rows();
  MatrixXd p = MatrixXd::Identity(n, n);
  if (h.cols() == 0 || n == 0) return p;
  Eigen::ColPivHouseholderQR<MatrixXd> qr;
  qr.setThreshold(kRankTolerance);
  qr.compute(h);
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(n, qr.rank());
  p.noalias() -= q * q.transpose();
  return 0.5 * (p + p.transpose());
}

ProjectedGradient projected_gradient(const FlowSet& set, const VectorXd& m, const VectorXd& g) {
  ProjectedGradient out;
  out.active = active_constraints(set, m);
  const Index np = set.pipes > 0 ? set.pipes : set.size();
  const double tol = 1e-10 * (1.0 + g.norm());
  for (std::size_t round = 0; round <= out.active.size() + 1; ++round) {
    const Projector proj(set, out.active, np);
    out.direction = proj.apply(g);
    const VectorXd u = proj.multipliers(g, out.direction);
    auto& a = out.active;
    const std::size_t nl = a.lower.size(), nu = a.upper.size(), nr = a.rows.size();
    std::vector<Index> lower, upper;
    bool released = false;
    for (std::size_t i = 0; i < nl; ++i) {
      const Index c = a.lower[i];
      if (u[static_cast<Index>(i)] < -tol && set.lower[c] < set.upper[c]) released = true;
      else lower.push_back(c);
    }
    for (std::size_t i = 0; i < nu; ++i) {
      const Index c = a.upper[i];
      if (u[static_cast<Index>(nl + i)] < -tol && set.lower[c] < set.upper[c]) released = true;
      else upper.push_back(c);
    }
    // General rows and cuts: release the most negative one.
    Index worst = -1;
    double worst_u = -tol;
    for (Index i = static_cast<Index>(nl + nu); i < u.size(); ++i)
      if (u[i] < worst_u) worst_u = u[i], worst = i;
    if (!released && worst < 0) break;
    a.lower = std::move(lower);
    a.upper = std::move(upper);
    if (worst >= 0) {
      const std::size_t w = static_cast<std::size_t>(worst) - nl - nu;
      if (w < nr) a.rows.erase(a.rows.begin() + static_cast<std::ptrdiff_t>(w));
      else a.cuts.erase(a.cuts.begin() + static_cast<std::ptrdiff_t>(w - nr));
    }
  }
  return out;
}

std::optional<double> step_size(double objective, const VectorXd& g, const VectorXd& pg, double gamma,
                                bool negated) {
  const double denom = pg.dot(g);
  if (!(denom > 0.0) || pg.norm() == 0.0) return std::nullopt;
  if (negated) return gamma * objective / (-pg).dot(g);
  return gamma * std::abs(objective) / denom;
}

double ray_limit(const FlowSet& set, const VectorXd& m, const VectorXd& d) {
  double t = 1.0;
  const double dn = d.norm();
  if (dn == 0.0) return 0.0;
  for (Index i = 0; i < m.size(); ++i) {
    if (d[i] > 0.0) t = std::min(t, std::max(0.0, (set.upper[i] - m[i]) / d[i]));
    else if (d[i] < 0.0) t = std::min(t, std::max(0.0, (set.lower[i] - m[i]) / d[i]));
  }
  auto limit = [&](const auto& row, double bound) {
    const double nd = row.dot(d);
    if (nd > 1e-10 * row.norm() * dn) t = std::min(t, std::max(0.0, (bound - row.dot(m)) / nd));
  };
  for (Index r = 0; r < set.inequalities.rows(); ++r) limit(set.inequalities.row(r).transpose(), set.rhs[r]);
  for (const auto& c : set.cuts)
    if (c.normal.norm() > 0.0) limit(c.normal, c.bound);
  return t;
}

VectorXd update_flow(const FlowSet& set, const VectorXd& m, const VectorXd& pg, double alpha) {
  const VectorXd d = -alpha * pg;
  VectorXd out = m + ray_limit(set, m, d) * d;
  snap(set, out);
  return out;
}

Revision revise_flow(const FlowSet& set, const VectorXd& m_r, const CutPlane& cut, const VectorXd& direction) {
  Revision rev;
  const double value = cut.value(m_r);
  const double wd = cut.normal.dot(direction);
  VectorXd target;
  if (std::abs(wd) <= 1e-12 * cut.normal.norm() * direction.norm() || direction.norm() == 0.0) {
    rev.fallback = true;
    const VectorXd onto = m_r - value / cut.normal.squaredNorm() * cut.normal;
    target = 0.5 * (m_r + onto);
  } else {
    rev.beta = value / wd;
    target = m_r - rev.beta * direction;
  }
  FlowSet with_cut = set;
  if (std::none_of(set.cuts.begin(), set.cuts.end(),
                   [&](const CutPlane& c) { return c.bound == cut.bound && c.normal == cut.normal; }))
    with_cut.cuts.push_back(cut);
  const VectorXd d = target - m_r;
  double t = ray_limit(with_cut, m_r, d);
  if (t > 1.0 - 1e-12) t = 1.0;
  rev.m = m_r + t * d;
  snap(set, rev.m);
  return rev;
}

ConvergenceCheck check_convergence(const std::vector<double>& h, double delta) {
  ConvergenceCheck c;
  if (h.size() < 2) {
    c.sigma = std::numeric_limits<double>::infinity();
    return c;
  }
  const double scale = h.front() != 0.0 ? std::abs(h.front()) : 1.0;
  c.sigma = std::abs((h[h.size() - 1] - h[h.size() - 2]) / scale);
  c.converged = c.sigma <= delta;
  return c;
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::stationary: return "stationary";
    case Termination::max_iterations: return "max_iterations";
    case Termination::infeasible_limit: return "infeasible_limit";
    case Termination::no_feasible: return "no_feasible";
    case Termination::single_solve: return "single_solve";
  }
  return "unknown";
}

FlowSchedule initial_flow(const DispatchInstance& in, const SolverConfig& cfg) {
  const FlowSet set = flow_set(in);
  const Index np = static_cast<Index>(in.heat.pipe_count());
  FlowSchedule m(np, in.periods);
  switch (cfg.initial) {
    case InitialFlow::midpoint:
      m = FlowSchedule::from_flat(0.5 * (set.lower + set.upper), np);
      break;
    case InitialFlow::nominal: {
      const MatrixXd mid = FlowSchedule::from_flat(0.5 * (set.lower + set.upper), np).matrix();
      const VectorXd mean = mid.rowwise().mean();
      m.matrix() = mean.replicate(1, in.periods);
      break;
    }
    case InitialFlow::given:
      if (!cfg.initial_flow) throw InputError("initial flow policy 'given' needs a flow schedule");
      if (cfg.initial_flow->pipes() != np || cfg.initial_flow->periods() != in.periods)
        throw InputError("initial flow schedule must be pipes x N");
      m = *cfg.initial_flow;
      break;
  }
  VectorXd flat = m.flat().cwiseMax(set.lower).cwiseMin(set.upper);
  if (set.violation(flat) > 1e-9) flat = project_onto(set, flat);
  return FlowSchedule::from_flat(flat, np);
}

DispatchResult dispatch(const DispatchInstance& in, const SolverConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto elapsed_ms = [&] { return std::chrono::duration<double, std::milli>(clock::now() - start).count(); };

  DispatchResult out;
  out.mode = "variable";
  FlowSet set = flow_set(in);
  const Index np = static_cast<Index>(in.heat.pipe_count());
  VectorXd candidate = initial_flow(in, cfg).flat();

  bool have_r = false;
  VectorXd m_r, pg_r, displacement;
  double j_r = 0.0, j_1 = 0.0;
  std::vector<double> history;
  int infeasible_run = 0, backtracks = 0;
  bool done = false;
  if (!cfg.dump_lp_dir.empty()) std::filesystem::create_directories(cfg.dump_lp_dir);

  auto backtrack = [&]() {
    if (!have_r || backtracks >= cfg.max_backtracks) return false;
    ++backtracks;
    displacement *= cfg.backtrack;
    candidate = m_r + displacement;
    snap(set, candidate);
    return true;
  };

  int k = 0;
  for (k = 1; k <= cfg.max_iterations && !done; ++k) {
    const FlowSchedule m = FlowSchedule::from_flat(candidate, np);
    if (!cfg.dump_lp_dir.empty()) {
      std::ofstream f(std::filesystem::path(cfg.dump_lp_dir) / ("iter_" + std::to_string(k) + ".lp"));
      write_lp(f, build_subproblem(in, m, cfg.subproblem).program);
    }
    const SubproblemResult res = evaluate_flow(in, m, cfg.subproblem);
    IterationRecord rec;
    rec.k = k;
    rec.objective = res.objective;

    if (res.status == SubproblemStatus::optimal) {
      infeasible_run = 0;
      if (!have_r) j_1 = res.objective;
      if (!have_r || res.objective <= j_r + 1e-9 * std::abs(j_1)) {
        rec.status = "accepted";
        history.push_back(res.objective);
        const auto conv = check_convergence(history, cfg.delta);
        rec.sigma = history.size() >= 2 ? conv.sigma : 0.0;
        have_r = true;
        m_r = candidate;
        j_r = res.objective;
        out.objective = res.objective;
        out.flows = m;
        out.state = res.state;
        const VectorXd g = FlowSchedule(res.gradient).flat();
        const ProjectedGradient pgr = projected_gradient(set, m_r, g);
        pg_r = pgr.direction;
        rec.grad_norm = pg_r.norm();
        if (history.size() >= 2 && conv.converged) {
          out.termination = Termination::converged;
          done = true;
        } else if (pg_r.norm() <= 1e-6 * (1.0 + g.norm())) {
          out.termination = Termination::stationary;
          done = true;
        } else if (const auto alpha = step_size(res.objective, g, pg_r, cfg.gamma, cfg.negated_stepsize)) {
          rec.alpha = *alpha;
          candidate = update_flow(set, m_r, pg_r, *alpha);
          displacement = candidate - m_r;
          backtracks = 0;
          if (displacement.norm() <= 1e-12 * (1.0 + m_r.norm())) {
            out.termination = Termination::stationary;
            done = true;
          }
        } else {
          out.termination = Termination::stationary;
          done = true;
        }
      } else {
        rec.status = "rejected";
        if (!backtrack()) {
          out.termination = Termination::stationary;
          done = true;
        }
      }
    } else if (res.status == SubproblemStatus::infeasible && !res.cuts.empty() && res.cuts.front().normal.norm() > 0.0) {
      rec.status = "infeasible";
      ++infeasible_run;
      const CutPlane& cut = res.cuts.front();
      set.cuts.push_back(cut);
      out.cuts.push_back(cut);
      out.relaxed_objective = res.relaxed_objective;
      if (infeasible_run >= cfg.infeasible_stop) {
        out.termination = have_r ? Termination::infeasible_limit : Termination::no_feasible;
        done = true;
      } else if (have_r) {
        const Revision rev = revise_flow(set, m_r, cut, pg_r);
        rec.alpha = rev.beta;
        candidate = rev.m;
        displacement = candidate - m_r;
        backtracks = 0;
        if (displacement.norm() <= 1e-12 * (1.0 + m_r.norm())) {
          out.termination = Termination::stationary;
          done = true;
        }
      } else {
        try {
          candidate = project_onto(set, candidate);
        } catch (const InputError&) {
          out.termination = Termination::no_feasible;
          done = true;
        }
      }
    } else {
      // Solver trouble or a cut without direction: retreat toward the last good point.
      rec.status = res.status == SubproblemStatus::infeasible ? "infeasible" : "failed";
      out.relaxed_objective = std::max(out.relaxed_objective, res.relaxed_objective);
      ++infeasible_run;
      if (infeasible_run >= cfg.infeasible_stop || !backtrack()) {
        out.termination = have_r ? Termination::stationary : Termination::no_feasible;
        done = true;
      }
    }
    rec.cuts = set.cuts.size();
    rec.wallclock_ms = elapsed_ms();
    out.log.push_back(rec);
  }
  out.iterations = static_cast<int>(out.log.size());
  if (!done) out.termination = have_r ? Termination::max_iterations : Termination::no_feasible;
  out.feasible = have_r;
  out.wallclock_s = elapsed_ms() / 1000.0;
  return out;
}

void write_iteration_log(std::ostream& os, const std::vector<IterationRecord>& log) {
  os << "k,status,J,sigma,step_alpha,n_cuts,grad_norm,wallclock_ms\n";
  for (const auto& r : log)
    os << r.k << ',' << r.status << ',' << format_number(r.objective) << ',' << format_number(r.sigma) << ','
       << format_number(r.alpha) << ',' << r.cuts << ',' << format_number(r.grad_norm) << ','
       << format_number(r.wallclock_ms) << '\n';
}

}  // namespace chp
