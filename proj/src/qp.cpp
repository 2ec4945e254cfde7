#include "chp/qp.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iterator>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>

namespace chp {

namespace {

using Eigen::Index;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

double inf_norm(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

// Quasi-definite KKT matrix [H A'; A 0] + diag(shift), factored by sparse LDL'.
class KktSystem {
 public:
  bool factor(const SparseMatrix& H, const SparseMatrix& A, const VectorXd& shift) {
    const Index n = H.rows(), m = A.rows();
    n_ = n;
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(H.nonZeros() + 2 * A.nonZeros() + n + m));
    for (Index k = 0; k < H.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(H, k); it; ++it) trips.emplace_back(it.row(), it.col(), it.value());
    for (Index k = 0; k < A.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
        trips.emplace_back(n + it.row(), it.col(), it.value());
        trips.emplace_back(it.col(), n + it.row(), it.value());
      }
    for (Index i = 0; i < n + m; ++i) trips.emplace_back(i, i, shift[i]);
    k_.resize(n + m, n + m);
    k_.setFromTriplets(trips.begin(), trips.end());
    if (k_.nonZeros() != nnz_) {
      ldlt_.analyzePattern(k_);
      nnz_ = k_.nonZeros();
    }
    // Strongly scaled barrier terms can wipe out a pivot; retry with a growing
    // primal shift relative to the largest diagonal entry.
    bump_ = 0.0;
    double maxdiag = 0.0;
    for (Index i = 0; i < n; ++i) maxdiag = std::max(maxdiag, std::abs(k_.coeff(i, i)));
    for (int attempt = 0; attempt < 8; ++attempt) {
      ldlt_.factorize(k_);
      if (ldlt_.info() == Eigen::Success && ldlt_.vectorD().allFinite()) return true;
      const double next = attempt == 0 ? 1e-13 * (1.0 + maxdiag) : 100.0 * bump_;
      for (Index i = 0; i < n; ++i) k_.coeffRef(i, i) += next - bump_;
      bump_ = next;
    }
    return false;
  }

  // Solves against K with iterative refinement towards K - diag(refine_shift).
  VectorXd solve(const VectorXd& rhs, const VectorXd& refine_shift, int steps = 4) const {
    VectorXd v = ldlt_.solve(rhs);
    const double scale = 1.0 + inf_norm(rhs);
    double last = std::numeric_limits<double>::infinity();
    for (int k = 0; k < steps; ++k) {
      VectorXd r = rhs - (k_ * v - refine_shift.cwiseProduct(v));
      r.head(n_) += bump_ * v.head(n_);
      const double res = inf_norm(r);
      if (res <= 1e-15 * scale || res >= last) break;
      last = res;
      v += ldlt_.solve(r);
    }
    return v;
  }

 private:
  SparseMatrix k_;
  Index nnz_ = -1;
  Index n_ = 0;
  double bump_ = 0.0;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt_;
};

double step_to_boundary(const VectorXd& s, const VectorXd& ds, const VectorXd& z, const VectorXd& dz) {
  double a = 1.0;
  for (Index i = 0; i < s.size(); ++i) {
    if (ds[i] < 0.0) a = std::min(a, -s[i] / ds[i]);
    if (dz[i] < 0.0) a = std::min(a, -z[i] / dz[i]);
  }
  return a;
}

struct Residuals {
  VectorXd rd, rp, rg;
  double pres = 0.0, dres = 0.0, gap = 0.0;
};

Residuals residuals(const QuadraticProgram& qp, const SparseMatrix& At, const SparseMatrix& Gt, const VectorXd& x,
                    const VectorXd& y, const VectorXd& z, const VectorXd& s) {
  Residuals r;
  r.rd = qp.Q * x + qp.c + At * y + Gt * z;
  r.rp = qp.A * x - qp.b;
  r.rg = qp.G * x + s - qp.h;
  r.pres = std::max(inf_norm(r.rp) / (1.0 + inf_norm(qp.b)), inf_norm(r.rg) / (1.0 + inf_norm(qp.h)));
  r.dres = inf_norm(r.rd) / (1.0 + inf_norm(qp.c));
  r.gap = s.size() ? std::abs(s.dot(z)) / (1.0 + std::abs(qp.objective(x))) : 0.0;
  return r;
}

// Solves the program with the inequalities in `active` held as equalities.
// `violated` lists inactive rows the solution breaks, `negative` active rows whose
// multiplier has the wrong sign.
bool solve_active(const QuadraticProgram& qp, const QpSettings& set, const std::vector<Index>& active,
                  const QpSolution& sol, QpSolution& p, std::vector<Index>& violated, std::vector<Index>& negative) {
  const Index n = qp.variables(), me = qp.equalities(), mi = qp.inequalities();
  const auto na = static_cast<Index>(active.size());

  std::vector<Triplet> trips;
  for (Index k = 0; k < qp.A.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(qp.A, k); it; ++it) trips.emplace_back(it.row(), it.col(), it.value());
  std::vector<Index> slot(static_cast<std::size_t>(mi), -1);
  for (Index a = 0; a < na; ++a) slot[static_cast<std::size_t>(active[static_cast<std::size_t>(a)])] = a;
  for (Index k = 0; k < qp.G.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(qp.G, k); it; ++it) {
      const Index a = slot[static_cast<std::size_t>(it.row())];
      if (a >= 0) trips.emplace_back(me + a, it.col(), it.value());
    }
  SparseMatrix aext(me + na, n);
  aext.setFromTriplets(trips.begin(), trips.end());
  VectorXd bext(me + na);
  bext.head(me) = qp.b;
  for (Index a = 0; a < na; ++a) bext[me + a] = qp.h[active[static_cast<std::size_t>(a)]];

  // Factor with a light shift, then refine against the exact KKT system so the
  // equalities close to rounding.
  const double rho = std::min(set.primal_regularization, 1e-9);
  VectorXd shift(n + me + na), refine = VectorXd::Zero(n + me + na);
  shift.head(n).setConstant(rho);
  shift.tail(me + na).setConstant(-std::min(set.dual_regularization, 1e-9));
  refine.tail(me + na) = shift.tail(me + na);

  KktSystem kkt;
  if (!kkt.factor(qp.Q, aext, shift)) return false;
  VectorXd rhs(n + me + na);
  rhs.head(n) = -qp.c + rho * sol.x;
  rhs.tail(me + na) = bext;
  const VectorXd v = kkt.solve(rhs, refine, 8);
  if (!v.allFinite()) return false;

  p = sol;
  p.x = v.head(n);
  p.y = v.segment(n, me);
  p.z.setZero(mi);
  const double zscale = 1.0 + inf_norm(sol.z);
  negative.clear();
  for (Index a = 0; a < na; ++a) {
    const double za = v[n + me + a];
    if (za < -1e-6 * zscale) negative.push_back(active[static_cast<std::size_t>(a)]);
    p.z[active[static_cast<std::size_t>(a)]] = std::max(za, 0.0);
  }
  p.s = qp.h - qp.G * p.x;
  violated.clear();
  for (Index i = 0; i < mi; ++i) {
    if (p.s[i] < -set.tolerance * (1.0 + std::abs(qp.h[i]))) violated.push_back(i);
    p.s[i] = std::max(p.s[i], 0.0);
  }
  return true;
}

// Re-solves the program with the inequalities the IPM marks as active held as
// equalities. A few active-set corrections follow: broken rows join, rows with a
// wrong-sign multiplier leave. Returns false (leaving sol untouched) if the guess
// does not settle.
bool polish(const QuadraticProgram& qp, const QpSettings& set, const SparseMatrix& At, const SparseMatrix& Gt,
            QpSolution& sol) {
  const Index mi = qp.inequalities();
  std::vector<Index> active, violated, negative;
  for (Index i = 0; i < mi; ++i)
    if (sol.z[i] > sol.s[i]) active.push_back(i);
  QpSolution p;
  for (int round = 0;; ++round) {
    if (!solve_active(qp, set, active, sol, p, violated, negative)) return false;
    if (violated.empty() && negative.empty()) break;
    if (round == 8) return false;
    std::vector<Index> next;
    std::set_difference(active.begin(), active.end(), negative.begin(), negative.end(), std::back_inserter(next));
    next.insert(next.end(), violated.begin(), violated.end());
    std::sort(next.begin(), next.end());
    active = std::move(next);
  }
  const Residuals r = residuals(qp, At, Gt, p.x, p.y, p.z, p.s);
  p.objective = qp.objective(p.x);
  if (r.dres > std::max(10.0 * set.tolerance, sol.dual_residual)) return false;
  if (p.objective > sol.objective + 1e-8 * (1.0 + std::abs(sol.objective))) return false;
  p.primal_residual = r.pres;
  p.dual_residual = r.dres;
  p.gap = r.gap;
  p.polished = true;
  sol = std::move(p);
  return true;
}

}  // namespace

namespace {

// Ruiz equilibration of the KKT matrix: x = D x', rows of A and G scaled by E.
struct Scaling {
  VectorXd d, ea, eg;
};

VectorXd col_inf(const SparseMatrix& m) {
  VectorXd out = VectorXd::Zero(m.cols());
  for (Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) out[k] = std::max(out[k], std::abs(it.value()));
  return out;
}

VectorXd row_inf(const SparseMatrix& m) {
  VectorXd out = VectorXd::Zero(m.rows());
  for (Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) out[it.row()] = std::max(out[it.row()], std::abs(it.value()));
  return out;
}

VectorXd inv_sqrt(const VectorXd& v) {
  return v.unaryExpr([](double a) { return a > 1e-12 ? 1.0 / std::sqrt(a) : 1.0; });
}

Scaling equilibrate(const QuadraticProgram& qp, QuadraticProgram& out, int passes = 20) {
  Scaling sc{VectorXd::Ones(qp.variables()), VectorXd::Ones(qp.equalities()), VectorXd::Ones(qp.inequalities())};
  out = qp;
  for (int k = 0; k < passes; ++k) {
    const VectorXd dx = inv_sqrt(col_inf(out.Q).cwiseMax(col_inf(out.A)).cwiseMax(col_inf(out.G)));
    const VectorXd da = inv_sqrt(row_inf(out.A)), dg = inv_sqrt(row_inf(out.G));
    out.Q = dx.asDiagonal() * out.Q * dx.asDiagonal();
    out.A = da.asDiagonal() * out.A * dx.asDiagonal();
    out.G = dg.asDiagonal() * out.G * dx.asDiagonal();
    sc.d.array() *= dx.array();
    sc.ea.array() *= da.array();
    sc.eg.array() *= dg.array();
  }
  out.c = sc.d.cwiseProduct(qp.c);
  out.b = sc.ea.cwiseProduct(qp.b);
  out.h = sc.eg.cwiseProduct(qp.h);
  return sc;
}

QpSolution interior_point(const QuadraticProgram& qp, const QpSettings& set) {
  const Index n = qp.variables(), me = qp.equalities(), mi = qp.inequalities();
  const SparseMatrix At = qp.A.transpose();
  const SparseMatrix Gt = qp.G.transpose();
  VectorXd shift(n + me);
  shift.head(n).setConstant(set.primal_regularization);
  shift.tail(me).setConstant(-set.dual_regularization);

  QpSolution sol;
  KktSystem kkt;

  // Start from the minimizer of f + 1/2 |Gx - h|^2 on Ax = b.
  {
    const SparseMatrix h0 = qp.Q + Gt * qp.G;
    if (!kkt.factor(h0, qp.A, shift)) return sol;
    VectorXd rhs(n + me);
    rhs.head(n) = -qp.c + Gt * qp.h;
    rhs.tail(me) = qp.b;
    const VectorXd v = kkt.solve(rhs, shift);
    sol.x = v.head(n);
    sol.y = VectorXd::Zero(me);
  }
  sol.s = (qp.h - qp.G * sol.x).cwiseMax(1.0);
  sol.z = VectorXd::Ones(mi);

  VectorXd& x = sol.x;
  VectorXd& y = sol.y;
  VectorXd& z = sol.z;
  VectorXd& s = sol.s;
  VectorXd dx, dy, ds, dz;
  std::optional<QpSolution> acceptable;
  int stalled = 0;
  for (int it = 0; it <= set.max_iterations; ++it) {
    const Residuals r = residuals(qp, At, Gt, x, y, z, s);
    sol.iterations = it;
    stalled = r.dres >= sol.dual_residual && it > 0 ? stalled + 1 : 0;
    sol.primal_residual = r.pres;
    sol.dual_residual = r.dres;
    sol.gap = r.gap;
    if (!x.allFinite() || !z.allFinite() || inf_norm(x) > 1e14 || inf_norm(y) > 1e14 || inf_norm(z) > 1e14) break;
    if (r.pres <= set.tolerance && r.dres <= set.tolerance && r.gap <= set.tolerance) {
      sol.status = QpStatus::optimal;
      break;
    }
    if (r.pres <= set.tolerance && r.gap <= set.tolerance && r.dres <= set.acceptable_dual &&
        (!acceptable || r.dres < acceptable->dual_residual))
      acceptable = sol;
    // Once complementarity has collapsed, further steps only amplify round-off.
    if (acceptable && stalled >= 3) break;
    if (it == set.max_iterations) break;

    const double mu = mi ? s.dot(z) / static_cast<double>(mi) : 0.0;
    const VectorXd w = z.cwiseQuotient(s);
    const SparseMatrix h = qp.Q + Gt * w.asDiagonal() * qp.G;
    if (!kkt.factor(h, qp.A, shift)) break;

    auto newton = [&](const VectorXd& rsz) {
      const VectorXd tmp = (-rsz + z.cwiseProduct(r.rg)).cwiseQuotient(s);
      VectorXd rhs(n + me);
      rhs.head(n) = -r.rd - Gt * tmp;
      rhs.tail(me) = -r.rp;
      const VectorXd v = kkt.solve(rhs, shift);
      dx = v.head(n);
      dy = v.tail(me);
      ds = -r.rg - qp.G * dx;
      dz = (-rsz - z.cwiseProduct(ds)).cwiseQuotient(s);
    };

    newton(s.cwiseProduct(z));
    double alpha = step_to_boundary(s, ds, z, dz);
    if (mi > 0) {
      const double mu_aff = (s + alpha * ds).dot(z + alpha * dz) / static_cast<double>(mi);
      const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
      const VectorXd rsz = s.cwiseProduct(z) + ds.cwiseProduct(dz) - VectorXd::Constant(mi, sigma * mu);
      newton(rsz);
      alpha = std::min(1.0, 0.99 * step_to_boundary(s, ds, z, dz));
    }
    x += alpha * dx;
    y += alpha * dy;
    s += alpha * ds;
    z += alpha * dz;
  }

  if (sol.status != QpStatus::optimal && acceptable) {
    sol = std::move(*acceptable);
    sol.status = QpStatus::optimal;
  }
  return sol;
}

}  // namespace

QpSolution solve_qp(const QuadraticProgram& qp, const QpSettings& set) {
  const Index n = qp.variables(), me = qp.equalities(), mi = qp.inequalities();
  if (qp.Q.rows() != n || qp.Q.cols() != n || qp.A.rows() != me || qp.A.cols() != n || qp.G.rows() != mi ||
      qp.G.cols() != n)
    throw std::invalid_argument("solve_qp: inconsistent program dimensions");

  QuadraticProgram scaled;
  const Scaling sc = equilibrate(qp, scaled, set.equilibrate ? 20 : 0);
  QpSolution sol = interior_point(scaled, set);
  if (sol.x.size() != n) return sol;
  sol.x = sc.d.cwiseProduct(sol.x);
  sol.y = sc.ea.cwiseProduct(sol.y);
  sol.z = sc.eg.cwiseProduct(sol.z);
  sol.s = sol.s.cwiseQuotient(sc.eg);
  const SparseMatrix At = qp.A.transpose();
  const SparseMatrix Gt = qp.G.transpose();
  const Residuals r = residuals(qp, At, Gt, sol.x, sol.y, sol.z, sol.s);
  sol.primal_residual = r.pres;
  sol.dual_residual = r.dres;
  sol.gap = r.gap;
  sol.objective = qp.objective(sol.x);
  if (sol.status == QpStatus::optimal && set.polish) polish(qp, set, At, Gt, sol);
  return sol;
}

namespace {

std::string lp_name(const std::vector<std::string>& names, Index i, char prefix) {
  std::string raw = static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)] : "";
  if (raw.empty()) return prefix + std::to_string(i);
  for (char& ch : raw)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.')) ch = '_';
  if (std::isdigit(static_cast<unsigned char>(raw[0]))) raw.insert(raw.begin(), prefix);
  return raw;
}

void write_row(std::ostream& os, const Eigen::SparseMatrix<double, Eigen::RowMajor>& rows_major, Index row, const std::vector<std::string>& names) {
  bool any = false;
  for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rows_major, row); it; ++it) {
    os << (it.value() < 0 ? " - " : " + ") << std::abs(it.value()) << ' ' << lp_name(names, it.col(), 'x');
    any = true;
  }
  if (!any) os << " 0 " << lp_name(names, 0, 'x');
}

}  // namespace

void write_lp(std::ostream& os, const QuadraticProgram& qp) {
  const auto prec = os.precision(17);
  const auto& vn = qp.variable_names;
  os << "\\ objective constant " << qp.c0 << "\nMinimize\n obj:";
  for (Index i = 0; i < qp.variables(); ++i)
    if (qp.c[i] != 0.0) os << (qp.c[i] < 0 ? " - " : " + ") << std::abs(qp.c[i]) << ' ' << lp_name(vn, i, 'x');
  if (qp.Q.nonZeros() > 0) {
    os << " + [";
    for (Index k = 0; k < qp.Q.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(qp.Q, k); it; ++it) {
        if (it.row() < it.col()) continue;
        const double v = it.row() == it.col() ? it.value() : 2.0 * it.value();
        os << (v < 0 ? " - " : " + ") << std::abs(v) << ' ' << lp_name(vn, it.row(), 'x');
        if (it.row() == it.col()) os << " ^2";
        else os << " * " << lp_name(vn, it.col(), 'x');
      }
    os << " ] / 2";
  }
  os << "\nSubject To\n";
  const Eigen::SparseMatrix<double, Eigen::RowMajor> a = qp.A, g = qp.G;
  for (Index r = 0; r < qp.equalities(); ++r) {
    os << ' ' << lp_name(qp.equality_names, r, 'e') << ':';
    write_row(os, a, r, vn);
    os << " = " << qp.b[r] << '\n';
  }
  for (Index r = 0; r < qp.inequalities(); ++r) {
    os << ' ' << lp_name(qp.inequality_names, r, 'g') << ':';
    write_row(os, g, r, vn);
    os << " <= " << qp.h[r] << '\n';
  }
  os << "Bounds\n";
  for (Index i = 0; i < qp.variables(); ++i) os << ' ' << lp_name(vn, i, 'x') << " free\n";
  os << "End\n";
  os.precision(prec);
}

}  // namespace chp
