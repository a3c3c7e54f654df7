#pragma once

#include "stvplan/common.hpp"

namespace stvplan {

/// Kinodynamic envelope of the ego vehicle on the s and d axes.
struct KinodynamicLimits {
  Interval v_s{0.0, 20.0};
  Interval v_d{-2.0, 2.0};
  Interval a_s{-2.0, 2.0};
  Interval a_d{-2.0, 2.0};
  Interval j_s{-2.0, 2.0};
  Interval j_d{-2.0, 2.0};
  double curvature_max = 0.2;

  /// Braking magnitude used wherever a single deceleration is needed.
  double max_decel() const { return -a_s.lo; }
  double max_accel() const { return a_s.hi; }

  void validate() const {
    const Interval all[] = {v_s, v_d, a_s, a_d, j_s, j_d};
    for (const Interval& i : all) {
      if (!(i.lo < i.hi)) throw Error(ErrorCode::kInvalidConfig, "limit lower bound >= upper bound");
    }
    if (v_s.lo < 0.0) throw Error(ErrorCode::kInvalidConfig, "longitudinal speed bound < 0");
    if (!(a_s.lo < 0.0 && a_s.hi > 0.0))
      throw Error(ErrorCode::kInvalidConfig, "longitudinal acceleration bounds must straddle 0");
    if (!(a_d.lo < 0.0 && a_d.hi > 0.0))
      throw Error(ErrorCode::kInvalidConfig, "lateral acceleration bounds must straddle 0");
    if (!(curvature_max > 0.0)) throw Error(ErrorCode::kInvalidConfig, "curvature_max <= 0");
  }
};

}  // namespace stvplan
