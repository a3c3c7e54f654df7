#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "stvplan/common.hpp"

namespace stvplan {

enum class Axis { kS = 0, kD = 1 };

inline constexpr int kBezierDegree = 5;
inline constexpr int kControlPoints = kBezierDegree + 1;

using ControlPoints = std::array<double, kControlPoints>;

/// One quintic piece. The curve is xi(t) = dT * B((t - lt) / dT) where B is
/// the Bernstein sum over the stored (unscaled) control points, so physical
/// position control points are dT * p.
struct BezierSegment {
  ControlPoints s{};
  ControlPoints d{};
  double lt = 0.0;
  double ut = 1.0;

  double duration() const { return ut - lt; }
  const ControlPoints& points(Axis axis) const { return axis == Axis::kS ? s : d; }
  ControlPoints& points(Axis axis) { return axis == Axis::kS ? s : d; }
};

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Bernstein sum of arbitrary degree via de Casteljau.
inline double bernstein_sum(std::span<const double> cps, double u) {
  std::array<double, kControlPoints> work{};
  const std::size_t n = cps.size();
  for (std::size_t i = 0; i < n; ++i) work[i] = cps[i];
  for (std::size_t r = 1; r < n; ++r)
    for (std::size_t i = 0; i + r < n; ++i) work[i] = (1.0 - u) * work[i] + u * work[i + 1];
  return work[0];
}

/// Control points of the order-th time derivative of a scaled segment.
/// Order 0 returns the physical position control points dT * p.
inline std::vector<double> derivative_control_points(const ControlPoints& p, double duration,
                                                     int order) {
  if (order < 0 || order > 3) throw Error(ErrorCode::kInvalidConfig, "derivative order must be 0..3");
  std::vector<double> q(p.begin(), p.end());
  if (order == 0) {
    for (double& x : q) x *= duration;
    return q;
  }
  double factor = 1.0;
  for (int r = 0; r < order; ++r) {
    factor *= (kBezierDegree - r);
    for (std::size_t i = 0; i + 1 < q.size(); ++i) q[i] = q[i + 1] - q[i];
    q.pop_back();
  }
  const double scale = factor / std::pow(duration, order - 1);
  for (double& x : q) x *= scale;
  return q;
}

inline double evaluate(const BezierSegment& seg, double t, Axis axis, int order) {
  constexpr double kSpanTol = 1e-9;
  if (t < seg.lt - kSpanTol || t > seg.ut + kSpanTol)
    throw Error(ErrorCode::kOutOfSpan, "t outside the segment span");
  const double dt = seg.duration();
  const double u = std::clamp((t - seg.lt) / dt, 0.0, 1.0);
  const std::vector<double> q = derivative_control_points(seg.points(axis), dt, order);
  return bernstein_sum(q, u);
}

/// Linear map from the six raw control points to the order-th derivative
/// control points, without the duration factor (so order 1..3 rows carry
/// 5, 20 and 60 times the forward differences).
inline Eigen::MatrixXd derivative_operator(int order) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(kControlPoints, kControlPoints);
  for (int r = 0; r < order; ++r) {
    const int rows = static_cast<int>(m.rows()) - 1;
    Eigen::MatrixXd next(rows, kControlPoints);
    for (int i = 0; i < rows; ++i) next.row(i) = (kBezierDegree - r) * (m.row(i + 1) - m.row(i));
    m = std::move(next);
  }
  return m;
}

/// Integral over [0, 1] of products of degree-m Bernstein polynomials.
inline Eigen::MatrixXd bernstein_gram(int m) {
  Eigen::MatrixXd g(m + 1, m + 1);
  for (int i = 0; i <= m; ++i)
    for (int j = 0; j <= m; ++j)
      g(i, j) = binomial(m, i) * binomial(m, j) / ((2 * m + 1) * binomial(2 * m, i + j));
  return g;
}

/// Q with integral_{lt}^{ut} (d^k xi / dt^k)^2 dt = p^T Q p for one axis.
inline Eigen::MatrixXd squared_derivative_integral(int order, double duration) {
  const Eigen::MatrixXd op = derivative_operator(order);
  const Eigen::MatrixXd gram = bernstein_gram(kBezierDegree - order);
  return std::pow(duration, 3 - 2 * order) * (op.transpose() * gram * op);
}

class PiecewiseBezier {
 public:
  PiecewiseBezier() = default;
  explicit PiecewiseBezier(std::vector<BezierSegment> segments) : segments_(std::move(segments)) {}

  const std::vector<BezierSegment>& segments() const { return segments_; }
  std::vector<BezierSegment>& segments() { return segments_; }
  bool empty() const { return segments_.empty(); }
  std::size_t size() const { return segments_.size(); }
  double start_time() const { return segments_.front().lt; }
  double end_time() const { return segments_.back().ut; }

  /// Segment owning time t; knots belong to the later segment, and times
  /// past the end clamp to the last one.
  std::size_t locate(double t) const {
    for (std::size_t i = 0; i + 1 < segments_.size(); ++i)
      if (t < segments_[i].ut) return i;
    return segments_.size() - 1;
  }

  double evaluate(double t, Axis axis, int order) const {
    const BezierSegment& seg = segments_[locate(t)];
    return stvplan::evaluate(seg, std::clamp(t, seg.lt, seg.ut), axis, order);
  }

  /// Adds a constant to one axis of every segment.
  void shift(Axis axis, double offset) {
    for (BezierSegment& seg : segments_)
      for (double& p : seg.points(axis)) p += offset / seg.duration();
  }

  /// Moves the time origin by `offset` seconds.
  void shift_time(double offset) {
    for (BezierSegment& seg : segments_) {
      seg.lt += offset;
      seg.ut += offset;
    }
  }

 private:
  std::vector<BezierSegment> segments_;
};

struct CurvatureProfile {
  std::vector<std::pair<double, double>> samples;  // (t, kappa)
  std::vector<double> degenerate_times;            // speed too low to define kappa
};

/// Curvature of the (s, d) path treating the Frenet plane as Cartesian.
inline CurvatureProfile curvature_profile(const PiecewiseBezier& traj, double sample_dt) {
  if (!(sample_dt > 0.0)) throw Error(ErrorCode::kInvalidConfig, "sample_dt must be positive");
  CurvatureProfile out;
  const double t0 = traj.start_time();
  const double t1 = traj.end_time();
  const auto count = static_cast<long>(std::floor((t1 - t0) / sample_dt + 1e-9));
  for (long k = 0; k <= count; ++k) {
    const double t = std::min(t0 + k * sample_dt, t1);
    const double vs = traj.evaluate(t, Axis::kS, 1);
    const double vd = traj.evaluate(t, Axis::kD, 1);
    const double as = traj.evaluate(t, Axis::kS, 2);
    const double ad = traj.evaluate(t, Axis::kD, 2);
    const double speed2 = vs * vs + vd * vd;
    if (speed2 < 1e-6) {
      out.degenerate_times.push_back(t);
      continue;
    }
    out.samples.emplace_back(t, std::abs(vs * ad - vd * as) / std::pow(speed2, 1.5));
  }
  return out;
}

}  // namespace stvplan
