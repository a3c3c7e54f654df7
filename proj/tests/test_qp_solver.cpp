#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "stvplan/qp_solver.hpp"

using namespace stvplan;

namespace {

QpProblem scalar_lower_bound() {
  // minimize x^2 subject to x >= 1
  QpProblem qp(1);
  qp.H(0, 0) = 2.0;
  Eigen::RowVectorXd a(1);
  a << 1.0;
  qp.add_inequality(a, 1.0, kInf);
  return qp;
}

}  // namespace

TEST(QpSolver, ScalarLowerBound) {
  const QpSolution sol = solve(scalar_lower_bound());
  ASSERT_EQ(sol.status, QpStatus::kOptimal);
  EXPECT_NEAR(sol.x(0), 1.0, 1e-8);
  EXPECT_NEAR(sol.objective, 1.0, 1e-8);
}

TEST(QpSolver, EqualityBySymmetry) {
  QpProblem qp(2);
  qp.H.setIdentity();
  Eigen::RowVectorXd a(2);
  a << 1.0, 1.0;
  qp.add_equality(a, 2.0);
  const QpSolution sol = solve(qp);
  ASSERT_EQ(sol.status, QpStatus::kOptimal);
  EXPECT_NEAR(sol.x(0), 1.0, 1e-8);
  EXPECT_NEAR(sol.x(1), 1.0, 1e-8);
}

TEST(QpSolver, BoxMatchesGridSearch) {
  QpProblem qp(2);
  qp.H.setIdentity();
  qp.g << -1.0, -2.0;
  for (int i = 0; i < 2; ++i) {
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(2);
    a(i) = 1.0;
    qp.add_inequality(a, 0.0, i == 0 ? 0.5 : 3.0);
  }
  const QpSolution sol = solve(qp);
  ASSERT_EQ(sol.status, QpStatus::kOptimal);

  // 1e-3 grid over the box.
  double best = kInf, bx = 0.0, by = 0.0;
  for (int i = 0; i <= 500; ++i)
    for (int j = 0; j <= 3000; ++j) {
      const double x = i * 1e-3, y = j * 1e-3;
      const double f = 0.5 * (x * x + y * y) - x - 2.0 * y;
      if (f < best) {
        best = f;
        bx = x;
        by = y;
      }
    }
  EXPECT_NEAR(sol.x(0), bx, 1e-3);
  EXPECT_NEAR(sol.x(1), by, 1e-3);
  EXPECT_NEAR(sol.x(0), 0.5, 1e-7);
  EXPECT_NEAR(sol.x(1), 2.0, 1e-7);
}

TEST(QpSolver, KktAtAnalyticOptimum) {
  const QpProblem qp = scalar_lower_bound();
  Eigen::VectorXd x(1), lambda(0), mu(1);
  x << 1.0;
  mu << -2.0;  // active lower bound carries a negative multiplier
  const KktResiduals r = check_kkt(qp, x, lambda, mu);
  EXPECT_EQ(r.stationarity, 0.0);
  EXPECT_EQ(r.primal, 0.0);
  EXPECT_EQ(r.dual, 0.0);
  EXPECT_EQ(r.complementarity, 0.0);
}

TEST(QpSolver, KktInteriorPointIsNotStationary) {
  const QpProblem qp = scalar_lower_bound();
  Eigen::VectorXd x(1), lambda(0), mu(1);
  x << 2.0;
  mu << 0.0;
  EXPECT_GT(check_kkt(qp, x, lambda, mu).stationarity, 0.0);
}

TEST(QpSolver, KktWrongSignMultiplier) {
  // x <= -1 written as an upper bound; at x = -1 the analytic multiplier is
  // +2. Negating it makes the sign point at a bound that is not there.
  QpProblem qp(1);
  qp.H(0, 0) = 2.0;
  Eigen::RowVectorXd a(1);
  a << 1.0;
  qp.add_inequality(a, -kInf, -1.0);
  Eigen::VectorXd x(1), lambda(0), mu(1);
  x << -1.0;
  mu << 2.0;
  EXPECT_EQ(check_kkt(qp, x, lambda, mu).dual, 0.0);
  mu << -2.0;
  EXPECT_GT(check_kkt(qp, x, lambda, mu).dual, 0.0);
}

TEST(QpSolver, DimensionMismatch) {
  QpProblem qp(2);
  qp.g.resize(3);
  EXPECT_THROW(
      {
        try {
          solve(qp);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
          throw;
        }
      },
      Error);
  const QpProblem ok = scalar_lower_bound();
  EXPECT_THROW(check_kkt(ok, Eigen::VectorXd::Zero(2), Eigen::VectorXd(0), Eigen::VectorXd::Zero(1)), Error);
}

TEST(QpSolver, RejectsIndefiniteHessian) {
  QpProblem qp(1);
  qp.H(0, 0) = -1.0;
  EXPECT_THROW(solve(qp), Error);
}

TEST(QpSolver, DetectsInfeasibility) {
  // x >= 2 and x <= 1
  QpProblem qp(1);
  qp.H(0, 0) = 1.0;
  Eigen::RowVectorXd a(1);
  a << 1.0;
  qp.add_inequality(a, 2.0, kInf);
  qp.add_inequality(a, -kInf, 1.0);
  EXPECT_EQ(solve(qp).status, QpStatus::kInfeasible);

  // Inconsistent equalities.
  QpProblem eq(2);
  eq.H.setIdentity();
  Eigen::RowVectorXd b(2);
  b << 1.0, 1.0;
  eq.add_equality(b, 1.0);
  eq.add_equality(b, 3.0);
  EXPECT_NE(solve(eq).status, QpStatus::kOptimal);
}

TEST(QpSolver, SemidefiniteHessian) {
  // minimize y^2 over 1 <= x <= 2, -1 <= y <= 1: x is free inside its box.
  QpProblem qp(2);
  qp.H(1, 1) = 2.0;
  qp.g << 1.0, 0.0;  // picks x = 1
  for (int i = 0; i < 2; ++i) {
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(2);
    a(i) = 1.0;
    qp.add_inequality(a, i == 0 ? 1.0 : -1.0, i == 0 ? 2.0 : 1.0);
  }
  const QpSolution sol = solve(qp);
  ASSERT_EQ(sol.status, QpStatus::kOptimal);
  EXPECT_NEAR(sol.x(0), 1.0, 1e-7);
  EXPECT_NEAR(sol.x(1), 0.0, 1e-7);
}

TEST(QpSolver, RandomProblemsMatchDualOracle) {
  std::mt19937_64 rng(20240601);
  for (int k = 0; k < 60; ++k) {
    const QpProblem qp = oracle::random_qp(rng);
    const QpSolution sol = solve(qp);
    ASSERT_EQ(sol.status, QpStatus::kOptimal) << "problem " << k;
    EXPECT_TRUE(sol.kkt.within(1e-6)) << "problem " << k;
    const auto ref = oracle::solve_qp_dual(qp);
    ASSERT_LT(ref.infeasibility, 1e-8) << "oracle did not converge on problem " << k;
    EXPECT_NEAR(sol.objective, ref.objective, 1e-5) << "problem " << k;
  }
}

TEST(QpSolver, MinimizerInvariantUnderObjectiveScaling) {
  std::mt19937_64 rng(77);
  for (int k = 0; k < 40; ++k) {
    QpProblem qp = oracle::random_qp(rng);
    const QpSolution a = solve(qp);
    ASSERT_EQ(a.status, QpStatus::kOptimal);
    for (double c : {0.01, 7.5, 300.0}) {
      QpProblem scaled = qp;
      scaled.H *= c;
      scaled.g *= c;
      const QpSolution b = solve(scaled);
      ASSERT_EQ(b.status, QpStatus::kOptimal);
      EXPECT_LT((a.x - b.x).cwiseAbs().maxCoeff(), 1e-6) << "problem " << k << " scale " << c;
    }
  }
}

TEST(QpSolver, Deterministic) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    const QpProblem qp = oracle::random_qp(rng);
    const QpSolution a = solve(qp), b = solve(qp);
    EXPECT_EQ(a.iterations, b.iterations);
    ASSERT_EQ(a.x.size(), b.x.size());
    for (Eigen::Index i = 0; i < a.x.size(); ++i) EXPECT_EQ(a.x(i), b.x(i));
  }
}

TEST(QpSolver, OptimalImpliesKkt) {
  std::mt19937_64 rng(99);
  QpOptions options;
  for (int k = 0; k < 100; ++k) {
    const QpSolution sol = solve(oracle::random_qp(rng), options);
    if (sol.status == QpStatus::kOptimal) {
      EXPECT_TRUE(sol.kkt.within(options.tolerance));
    }
  }
}
