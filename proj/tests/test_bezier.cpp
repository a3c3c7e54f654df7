#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stvplan/bezier.hpp"
#include "stvplan/harness/simulator.hpp"

using namespace stvplan;
using stvplan::harness::uniform;

namespace {

BezierSegment segment_with(const ControlPoints& s, const ControlPoints& d, double lt, double ut) {
  BezierSegment seg;
  seg.s = s;
  seg.d = d;
  seg.lt = lt;
  seg.ut = ut;
  return seg;
}

/// Quintic matching position, velocity and acceleration at both ends, in
/// the stored (divided by the duration) convention.
ControlPoints hermite(double x0, double v0, double a0, double x1, double v1, double a1, double dt) {
  ControlPoints p;
  p[0] = x0;
  p[1] = x0 + dt * v0 / 5.0;
  p[2] = 2.0 * p[1] - p[0] + dt * dt * a0 / 20.0;
  p[5] = x1;
  p[4] = x1 - dt * v1 / 5.0;
  p[3] = 2.0 * p[4] - p[5] + dt * dt * a1 / 20.0;
  for (double& x : p) x /= dt;
  return p;
}

BezierSegment random_segment(std::mt19937_64& rng) {
  BezierSegment seg;
  seg.lt = uniform(rng, -5.0, 5.0);
  seg.ut = seg.lt + uniform(rng, 0.2, 3.0);
  for (int k = 0; k < 6; ++k) {
    seg.s[k] = uniform(rng, -20.0, 20.0);
    seg.d[k] = uniform(rng, -3.0, 3.0);
  }
  return seg;
}

}  // namespace

TEST(Bezier, ConstantPointsScaleByDuration) {
  ControlPoints c;
  c.fill(3.0);
  const BezierSegment seg = segment_with(c, c, 1.0, 3.0);
  for (double t : {1.0, 1.7, 2.5, 3.0}) {
    EXPECT_NEAR(evaluate(seg, t, Axis::kS, 0), 6.0, 1e-12);
    EXPECT_NEAR(evaluate(seg, t, Axis::kS, 1), 0.0, 1e-12);
  }
}

TEST(Bezier, LinearPrecision) {
  const BezierSegment seg = segment_with({0.0, 0.2, 0.4, 0.6, 0.8, 1.0}, {}, 0.0, 1.0);
  EXPECT_NEAR(evaluate(seg, 0.5, Axis::kS, 0), 0.5, 1e-15);
  // De Casteljau by hand at u = 0.5 on a non-linear set.
  const ControlPoints p = {1.0, -2.0, 4.0, 0.5, 3.0, -1.0};
  std::array<double, 6> w = p;
  for (int r = 1; r < 6; ++r)
    for (int i = 0; i + r < 6; ++i) w[i] = 0.5 * (w[i] + w[i + 1]);
  EXPECT_NEAR(evaluate(segment_with(p, {}, 0.0, 1.0), 0.5, Axis::kS, 0), w[0], 1e-14);
}

TEST(Bezier, DerivativeControlPointExamples) {
  ControlPoints equal;
  equal.fill(2.0);
  for (double q : derivative_control_points(equal, 1.3, 1)) EXPECT_EQ(q, 0.0);

  const auto first = derivative_control_points({0, 1, 2, 3, 4, 5}, 1.0, 1);
  ASSERT_EQ(first.size(), 5u);
  for (double q : first) EXPECT_DOUBLE_EQ(q, 5.0);

  const auto second = derivative_control_points({0, 0, 1, 0, 0, 0}, 2.0, 2);
  const std::vector<double> expected = {10.0, -20.0, 10.0, 0.0};
  ASSERT_EQ(second.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(second[k], expected[k]);

  EXPECT_EQ(derivative_control_points({0, 0, 0, 0, 0, 0}, 1.0, 3).size(), 3u);
  EXPECT_THROW(derivative_control_points({}, 1.0, 4), Error);
}

TEST(Bezier, DerivativesMatchFiniteDifferences) {
  // Central differences at 10^3 sample times on the two examples.
  const BezierSegment ramp = segment_with({0, 1, 2, 3, 4, 5}, {}, 0.0, 1.0);
  const BezierSegment bump = segment_with({0, 0, 1, 0, 0, 0}, {}, 0.0, 2.0);
  for (const BezierSegment& seg : {ramp, bump}) {
    const double h = 1e-4 * seg.duration();
    for (int k = 1; k < 1000; ++k) {
      const double t = seg.lt + seg.duration() * k / 1000.0;
      if (t - h < seg.lt || t + h > seg.ut) continue;
      for (int order = 1; order <= 3; ++order) {
        const double fd = (evaluate(seg, t + h, Axis::kS, order - 1) - evaluate(seg, t - h, Axis::kS, order - 1)) /
                          (2.0 * h);
        const double exact = evaluate(seg, t, Axis::kS, order);
        EXPECT_NEAR(fd, exact, 1e-5 * std::max(1.0, std::abs(exact)));
      }
    }
  }
  EXPECT_NEAR(evaluate(ramp, 0.37, Axis::kS, 1), 5.0, 1e-12);
}

TEST(Bezier, RandomSegmentProperties) {
  std::mt19937_64 rng(3);
  for (int n = 0; n < 1000; ++n) {
    const BezierSegment seg = random_segment(rng);
    const double dt = seg.duration();
    for (Axis axis : {Axis::kS, Axis::kD}) {
      const auto& p = seg.points(axis);
      EXPECT_EQ(evaluate(seg, seg.lt, axis, 0), dt * p[0]);
      EXPECT_EQ(evaluate(seg, seg.ut, axis, 0), dt * p[5]);
      const double lo = dt * *std::min_element(p.begin(), p.end());
      const double hi = dt * *std::max_element(p.begin(), p.end());
      for (int k = 0; k <= 20; ++k) {
        const double t = seg.lt + dt * k / 20.0;
        const double x = evaluate(seg, t, axis, 0);
        EXPECT_GE(x, lo - 1e-12);
        EXPECT_LE(x, hi + 1e-12);
        for (int order = 0; order <= 3; ++order) {
          const auto q = derivative_control_points(p, dt, order);
          EXPECT_NEAR(bernstein_sum(q, (t - seg.lt) / dt), evaluate(seg, t, axis, order), 1e-9);
        }
      }
    }
  }
}

TEST(Bezier, OutOfSpan) {
  const BezierSegment seg = segment_with({}, {}, 1.0, 2.0);
  EXPECT_NO_THROW(evaluate(seg, 2.0 + 5e-10, Axis::kS, 0));
  try {
    evaluate(seg, 2.1, Axis::kS, 0);
    FAIL() << "expected OutOfSpan";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutOfSpan);
  }
}

TEST(Bezier, SquaredDerivativeIntegralMatchesQuadrature) {
  std::mt19937_64 rng(11);
  for (int n = 0; n < 30; ++n) {
    const BezierSegment seg = random_segment(rng);
    Eigen::Map<const Eigen::Matrix<double, 6, 1>> p(seg.s.data());
    for (int order = 1; order <= 3; ++order) {
      const double closed = p.dot(squared_derivative_integral(order, seg.duration()) * p);
      // Five-point Gauss-Legendre is exact for the degree <= 8 integrand.
      const double nodes[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                               0.9061798459386640};
      const double weights[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                 0.2369268850561891, 0.2369268850561891};
      double quad = 0.0;
      for (int k = 0; k < 5; ++k) {
        const double t = seg.lt + 0.5 * seg.duration() * (1.0 + nodes[k]);
        const double v = evaluate(seg, t, Axis::kS, order);
        quad += 0.5 * seg.duration() * weights[k] * v * v;
      }
      EXPECT_NEAR(closed, quad, 1e-8 * std::max(1.0, std::abs(quad)));
    }
  }
}

TEST(Bezier, StraightConstantSpeedHasZeroCurvature) {
  // s = 10 t, d = 0 over [0, 2]
  const double dt = 2.0;
  const PiecewiseBezier traj({segment_with(hermite(0, 10, 0, 20, 10, 0, dt), {}, 0.0, dt)});
  const CurvatureProfile k = curvature_profile(traj, 0.02);
  EXPECT_EQ(k.samples.size(), 101u);
  EXPECT_TRUE(k.degenerate_times.empty());
  for (const auto& [t, kappa] : k.samples) EXPECT_NEAR(kappa, 0.0, 1e-12);
}

TEST(Bezier, CircularArcCurvature) {
  // Radius 50 at 10 m/s for 1 s, matched in position, velocity and
  // acceleration at both ends. The analytic curvature is 1/50.
  const double r = 50.0, v = 10.0, w = v / r, dt = 1.0;
  auto state = [&](double t) {
    const double th = w * t;
    return std::array<double, 6>{r * std::sin(th),          v * std::cos(th),  -v * w * std::sin(th),
                                 r * (1.0 - std::cos(th)), v * std::sin(th), v * w * std::cos(th)};
  };
  const auto a = state(0.0), b = state(dt);
  const PiecewiseBezier traj({segment_with(hermite(a[0], a[1], a[2], b[0], b[1], b[2], dt),
                                           hermite(a[3], a[4], a[5], b[3], b[4], b[5], dt), 0.0, dt)});
  const CurvatureProfile k = curvature_profile(traj, 0.05);
  ASSERT_FALSE(k.samples.empty());
  for (const auto& [t, kappa] : k.samples) EXPECT_NEAR(kappa, 0.02, 2e-5) << "t = " << t;
}

TEST(Bezier, StandstillIsDegenerate) {
  ControlPoints c;
  c.fill(4.0);
  const PiecewiseBezier traj({segment_with(c, c, 0.0, 1.0)});
  const CurvatureProfile k = curvature_profile(traj, 0.1);
  EXPECT_TRUE(k.samples.empty());
  EXPECT_EQ(k.degenerate_times.size(), 11u);
  EXPECT_THROW(curvature_profile(traj, 0.0), Error);
}

TEST(Bezier, PiecewiseLocateAndShift) {
  ControlPoints c;
  c.fill(1.0);
  PiecewiseBezier traj({segment_with(c, c, 0.0, 1.0), segment_with(c, c, 1.0, 3.0)});
  EXPECT_EQ(traj.locate(0.5), 0u);
  EXPECT_EQ(traj.locate(1.0), 1u);  // knots belong to the later segment
  EXPECT_EQ(traj.locate(9.0), 1u);
  EXPECT_NEAR(traj.evaluate(2.0, Axis::kS, 0), 2.0, 1e-12);
  traj.shift(Axis::kS, 5.0);
  EXPECT_NEAR(traj.evaluate(0.5, Axis::kS, 0), 6.0, 1e-12);
  EXPECT_NEAR(traj.evaluate(2.0, Axis::kS, 0), 7.0, 1e-12);
  EXPECT_NEAR(traj.evaluate(2.0, Axis::kD, 0), 2.0, 1e-12);
  traj.shift_time(10.0);
  EXPECT_EQ(traj.start_time(), 10.0);
  EXPECT_EQ(traj.end_time(), 13.0);
}
