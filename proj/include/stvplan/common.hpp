#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stvplan {

enum class ErrorCode {
  kInvalidConfig,
  kInvalidLane,
  kAmbiguousProjection,
  kOutOfRange,
  kEmptyBand,
  kOutOfSpan,
  kDimensionMismatch,
  kNumericalBreakdown,
  kEmptySequence,
  kNoTransition,
  kMissingEgo,
  kTruncatedLog,
  kParseError,
  kAllBehaviorsFailed,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kInvalidLane: return "InvalidLane";
    case ErrorCode::kAmbiguousProjection: return "AmbiguousProjection";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kEmptyBand: return "EmptyBand";
    case ErrorCode::kOutOfSpan: return "OutOfSpan";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNumericalBreakdown: return "NumericalBreakdown";
    case ErrorCode::kEmptySequence: return "EmptySequence";
    case ErrorCode::kNoTransition: return "NoTransition";
    case ErrorCode::kMissingEgo: return "MissingEgo";
    case ErrorCode::kTruncatedLog: return "TruncatedLog";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kAllBehaviorsFailed: return "AllBehaviorsFailed";
  }
  return "Unknown";
}

// Thrown for precondition violations and unrecoverable input problems.
// Expected planning outcomes (infeasible corridors, failed solves) are
// reported through result types instead.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Closed interval on the real line. Empty when lo > hi.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double length() const { return hi - lo; }
  bool empty() const { return hi < lo; }
  bool contains(double x, double tol = 0.0) const {
    return x >= lo - tol && x <= hi + tol;
  }

  friend bool operator==(const Interval&, const Interval&) = default;
};

inline Interval intersect(const Interval& a, const Interval& b) {
  return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

inline Interval hull(const Interval& a, const Interval& b) {
  return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
}

/// Length of the overlap of two intervals, 0 when disjoint.
inline double overlap_length(const Interval& a, const Interval& b) {
  return std::max(0.0, std::min(a.hi, b.hi) - std::max(a.lo, b.lo));
}

}  // namespace stvplan
