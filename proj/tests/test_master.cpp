#include "doctest.h"

#include "chp/harness.hpp"
#include "chp/master.hpp"
#include "fixtures.hpp"

#include <random>
#include <sstream>

using namespace chp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Box [lo, hi]^n with no coupling rows.
FlowSet box(Eigen::Index n, double lo, double hi) {
  FlowSet s;
  s.lower = VectorXd::Constant(n, lo);
  s.upper = VectorXd::Constant(n, hi);
  s.equalities.resize(0, n);
  s.inequalities.resize(0, n);
  s.rhs.resize(0);
  return s;
}

CutPlane cut(const VectorXd& normal, double bound) {
  CutPlane c;
  c.normal = normal;
  c.bound = bound;
  return c;
}

// Orthogonal projector onto null(H') from the SVD pseudo-inverse.
MatrixXd pinv_projector(const MatrixXd& h) {
  Eigen::JacobiSVD<MatrixXd> svd(h, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd sv = svd.singularValues();
  const double cutoff = 1e-10 * (sv.size() ? sv[0] : 1.0);
  MatrixXd inv = MatrixXd::Zero(h.cols(), h.rows());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) inv += svd.matrixV().col(i) * svd.matrixU().col(i).transpose() / sv[i];
  return MatrixXd::Identity(h.rows(), h.rows()) - h * inv;
}

}  // namespace

TEST_CASE("projection matrix agrees with the pseudo-inverse form") {
  std::mt19937 rng(11);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index n = 3 + trial % 9, k = 1 + trial % 4;
    MatrixXd h = MatrixXd::NullaryExpr(n, k, [&] { return gauss(rng); });
    if (trial % 5 == 0 && k > 1) h.col(k - 1) = 2.0 * h.col(0);  // dependent column
    const MatrixXd p = projection_matrix(h);
    CHECK((p - pinv_projector(h)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((p * p - p).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((p * h).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(projection_matrix(MatrixXd(4, 0)).isIdentity());
}

TEST_CASE("step size") {
  const VectorXd g = (VectorXd(2) << 2.0, 0.0).finished();
  // 0.1 * 100 / (2*2)
  CHECK(*step_size(100.0, g, g, 0.1) == doctest::Approx(2.5));
  CHECK(*step_size(100.0, g, g, 0.2) == doctest::Approx(5.0));
  CHECK(*step_size(-100.0, g, g, 0.1) == doctest::Approx(2.5));
  CHECK(*step_size(100.0, g, g, 0.1, true) == doctest::Approx(-2.5));
  CHECK_FALSE(step_size(100.0, g, VectorXd::Zero(2), 0.1));
  CHECK_FALSE(step_size(100.0, g, -g, 0.1));
}

TEST_CASE("update_flow steps downhill and stops on the first bound") {
  const FlowSet s = box(2, 0.0, 10.0);
  const VectorXd m = (VectorXd(2) << 5.0, 5.0).finished();
  const VectorXd pg = (VectorXd(2) << 1.0, -2.0).finished();
  const VectorXd free = update_flow(s, m, pg, 1.0);
  CHECK(free[0] == doctest::Approx(4.0));
  CHECK(free[1] == doctest::Approx(7.0));
  // alpha 5 would reach (0, 15); the upper bound on m2 is met at t = 0.5.
  const VectorXd clipped = update_flow(s, m, pg, 5.0);
  CHECK(clipped[0] == doctest::Approx(2.5));
  CHECK(clipped[1] == 10.0);
}

TEST_CASE("update_flow respects cuts") {
  FlowSet s = box(2, 0.0, 10.0);
  s.cuts.push_back(cut(VectorXd::Ones(2), 12.0));
  const VectorXd m = (VectorXd(2) << 5.0, 5.0).finished();
  const VectorXd out = update_flow(s, m, -VectorXd::Ones(2), 4.0);
  CHECK(out.sum() == doctest::Approx(12.0));
  CHECK(s.violation(out) < 1e-12);
}

TEST_CASE("revise_flow meets the cut along the direction") {
  FlowSet s = box(2, 0.0, 10.0);
  const CutPlane c = cut(VectorXd::Ones(2), 1.5);
  const VectorXd m = VectorXd::Ones(2);
  const auto rev = revise_flow(s, m, c, (VectorXd(2) << 1.0, 0.0).finished());
  CHECK_FALSE(rev.fallback);
  CHECK(rev.beta == doctest::Approx(0.5));
  CHECK(rev.m[0] == doctest::Approx(0.5));
  CHECK(rev.m[1] == doctest::Approx(1.0));

  // Direction parallel to the cut: halfway towards the cut projection.
  const auto fb = revise_flow(s, m, c, (VectorXd(2) << 1.0, -1.0).finished());
  CHECK(fb.fallback);
  CHECK(fb.m[0] == doctest::Approx(0.875));
  CHECK(fb.m[1] == doctest::Approx(0.875));
}

TEST_CASE("check_convergence") {
  CHECK_FALSE(check_convergence({100.0}, 1e-4).converged);
  const auto c = check_convergence({100.0, 99.0}, 1e-4);
  CHECK(c.sigma == doctest::Approx(0.01));
  CHECK_FALSE(c.converged);
  CHECK(check_convergence({100.0, 99.0, 98.995}, 1e-4).converged);
}

TEST_CASE("projected gradient releases bounds the gradient pulls away from") {
  FlowSet s = box(2, 0.0, 10.0);
  const VectorXd m = (VectorXd(2) << 0.0, 5.0).finished();
  // Descent is -g: g = (1, 1) pushes m1 below 0, so the bound holds.
  const auto held = projected_gradient(s, m, VectorXd::Ones(2));
  CHECK(held.direction[0] == doctest::Approx(0.0));
  CHECK(held.direction[1] == doctest::Approx(1.0));
  // g = (-1, 1) moves m1 into the box; the bound is released.
  const auto freed = projected_gradient(s, m, (VectorXd(2) << -1.0, 1.0).finished());
  CHECK(freed.active.lower.empty());
  CHECK(freed.direction[0] == doctest::Approx(-1.0));
}

TEST_CASE("flow set of the three-node network") {
  const auto in = fixtures::three_node(3);
  const FlowSet s = flow_set(in);
  CHECK(s.size() == 12);
  const FlowSchedule m0 = initial_flow(in, {});
  CHECK(s.violation(m0.flat()) < 1e-9);
  // Supply and return flows through the same load must match.
  for (int t = 0; t < 3; ++t) {
    CHECK(m0(0, t) == doctest::Approx(m0(2, t)));
    CHECK(m0(1, t) == doctest::Approx(m0(3, t)));
  }
  const VectorXd far = VectorXd::Constant(12, 100.0);
  const VectorXd p = project_onto(s, far);
  CHECK(s.violation(p) < 1e-9);
  CHECK(p.maxCoeff() <= 30.0);
}

TEST_CASE("dispatch on the three-node network") {
  const auto in = fixtures::three_node(4);
  SolverConfig cfg;
  cfg.max_iterations = 15;
  const auto r = dispatch(in, cfg);
  REQUIRE(r.feasible);
  const auto f = fixed_flow_dispatch(in, initial_flow(in, cfg));
  REQUIRE(f.feasible);
  CHECK(r.objective <= f.objective * (1.0 + 1e-9));
  double last = std::numeric_limits<double>::infinity();
  for (const auto& rec : r.log)
    if (rec.status == "accepted") {
      CHECK(rec.objective <= last * (1.0 + 1e-12));
      last = rec.objective;
    }
  CHECK(verify_solution(in, r).passed());

  std::ostringstream os;
  write_iteration_log(os, r.log);
  CHECK(os.str().rfind("k,status,", 0) == 0);
}

TEST_CASE("dispatch with pinned flows reduces to the fixed-flow solve") {
  auto in = fixtures::three_node(3);
  for (auto* side : {&in.heat.supply_pipes, &in.heat.return_pipes})
    for (auto& p : *side) p.flow_min = p.flow_max = VectorXd::Constant(3, 12.0);
  const auto r = dispatch(in);
  REQUIRE(r.feasible);
  FlowSchedule m(4, 3);
  m.matrix().setConstant(12.0);
  const auto f = fixed_flow_dispatch(in, m);
  CHECK(r.objective == doctest::Approx(f.objective).epsilon(1e-9));
}
