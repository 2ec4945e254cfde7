#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <iosfwd>
#include <string>
#include <vector>

namespace chp {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// min 1/2 x'Qx + c'x + c0  s.t.  A x = b,  G x <= h.
struct QuadraticProgram {
  SparseMatrix Q;
  Eigen::VectorXd c;
  double c0 = 0.0;
  SparseMatrix A;
  Eigen::VectorXd b;
  SparseMatrix G;
  Eigen::VectorXd h;

  // Optional names for LP dumps.
  std::vector<std::string> variable_names;
  std::vector<std::string> equality_names;
  std::vector<std::string> inequality_names;

  Eigen::Index variables() const { return c.size(); }
  Eigen::Index equalities() const { return b.size(); }
  Eigen::Index inequalities() const { return h.size(); }
  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(Q * x) + c.dot(x) + c0; }
};

struct QpSettings {
  double tolerance = 1e-9;
  /// Long temperature chains can stall stationarity once complementarity has
  /// collapsed. The best such iterate is still accepted (and polished when the
  /// polish succeeds) if its dual residual is below this.
  double acceptable_dual = 1e-4;
  int max_iterations = 80;
  double primal_regularization = 1e-7;
  double dual_regularization = 1e-7;
  bool polish = true;
  bool equilibrate = false;  // Ruiz scaling of the KKT matrix before solving
};

enum class QpStatus { optimal, not_converged };

/// Primal-dual pair under the Lagrangian f + y'(Ax - b) + z'(Gx - h), z >= 0.
struct QpSolution {
  QpStatus status = QpStatus::not_converged;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd z;
  Eigen::VectorXd s;  // h - G x
  double objective = 0.0;
  int iterations = 0;
  bool polished = false;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
};

/// Mehrotra predictor-corrector interior point method on the regularized KKT system,
/// followed by an active-set polish that solves the equality-constrained QP exactly.
QpSolution solve_qp(const QuadraticProgram& qp, const QpSettings& settings = {});

/// Writes the program in CPLEX LP text format.
void write_lp(std::ostream& os, const QuadraticProgram& qp);

}  // namespace chp
