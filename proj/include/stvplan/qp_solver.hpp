#pragma once

#include <algorithm>
#include <cmath>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "stvplan/common.hpp"

namespace stvplan {

/// minimize 0.5 x'Hx + g'x  s.t.  A_eq x = b_eq,  lb <= A_in x <= ub.
/// Infinite entries in lb/ub mark one-sided rows.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  QpProblem() = default;
  explicit QpProblem(Eigen::Index n)
      : H(Eigen::MatrixXd::Zero(n, n)),
        g(Eigen::VectorXd::Zero(n)),
        A_eq(0, n),
        b_eq(0),
        A_in(0, n),
        lb(0),
        ub(0) {}

  Eigen::Index dimension() const { return g.size(); }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(H * x) + g.dot(x); }

  void check_dimensions() const {
    const Eigen::Index n = g.size();
    const bool ok = H.rows() == n && H.cols() == n && A_eq.cols() == n &&
                    A_eq.rows() == b_eq.size() && A_in.cols() == n &&
                    A_in.rows() == lb.size() && A_in.rows() == ub.size();
    if (!ok) throw Error(ErrorCode::kDimensionMismatch, "QP matrix dimensions are inconsistent");
  }

  /// Symmetry and semidefiniteness up to tolerance.
  void check_convexity() const {
    if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, H.cwiseAbs().maxCoeff()))
      throw Error(ErrorCode::kInvalidConfig, "H is not symmetric");
    if (H.size() > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H, Eigen::EigenvaluesOnly);
      if (eig.eigenvalues().minCoeff() < -1e-8 * std::max(1.0, H.cwiseAbs().maxCoeff()))
        throw Error(ErrorCode::kInvalidConfig, "H is not positive semidefinite");
    }
  }

  /// Appends the row lo <= a'x <= hi.
  void add_inequality(const Eigen::RowVectorXd& a, double lo, double hi) {
    const Eigen::Index r = A_in.rows();
    A_in.conservativeResize(r + 1, Eigen::NoChange);
    lb.conservativeResize(r + 1);
    ub.conservativeResize(r + 1);
    A_in.row(r) = a;
    lb(r) = lo;
    ub(r) = hi;
  }

  void add_equality(const Eigen::RowVectorXd& a, double b) {
    const Eigen::Index r = A_eq.rows();
    A_eq.conservativeResize(r + 1, Eigen::NoChange);
    b_eq.conservativeResize(r + 1);
    A_eq.row(r) = a;
    b_eq(r) = b;
  }
};

enum class QpStatus { kOptimal, kInfeasible, kMaxIterations };

inline std::string_view to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kOptimal: return "Optimal";
    case QpStatus::kInfeasible: return "Infeasible";
    case QpStatus::kMaxIterations: return "MaxIterations";
  }
  return "?";
}

/// Absolute KKT residuals plus the magnitudes they are judged against.
/// Multipliers follow H x + g + A_eq' lambda + A_in' mu = 0 with mu > 0 on
/// an active upper bound and mu < 0 on an active lower bound.
struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;

  double stationarity_scale = 0.0;
  double primal_scale = 0.0;
  double dual_scale = 0.0;
  double complementarity_scale = 0.0;

  /// Each residual <= tol * (1 + its scale).
  bool within(double tol) const {
    return stationarity <= tol * (1.0 + stationarity_scale) &&
           primal <= tol * (1.0 + primal_scale) && dual <= tol * (1.0 + dual_scale) &&
           complementarity <= tol * (1.0 + complementarity_scale);
  }
};

inline KktResiduals check_kkt(const QpProblem& qp, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& lambda, const Eigen::VectorXd& mu) {
  qp.check_dimensions();
  if (x.size() != qp.dimension() || lambda.size() != qp.A_eq.rows() || mu.size() != qp.A_in.rows())
    throw Error(ErrorCode::kDimensionMismatch, "KKT point dimensions do not match the problem");
  KktResiduals r;
  const Eigen::VectorXd hx = qp.H * x;
  const Eigen::VectorXd at_l = qp.A_eq.transpose() * lambda;
  const Eigen::VectorXd at_m = qp.A_in.transpose() * mu;
  r.stationarity = (hx + qp.g + at_l + at_m).cwiseAbs().maxCoeff();
  r.stationarity_scale = std::max({hx.cwiseAbs().maxCoeff(), qp.g.cwiseAbs().maxCoeff(),
                                   at_l.size() ? at_l.cwiseAbs().maxCoeff() : 0.0,
                                   at_m.size() ? at_m.cwiseAbs().maxCoeff() : 0.0});
  if (x.size() == 0) r.stationarity = 0.0;

  const Eigen::VectorXd ex = qp.A_eq * x;
  const Eigen::VectorXd ix = qp.A_in * x;
  for (Eigen::Index i = 0; i < ex.size(); ++i) {
    r.primal = std::max(r.primal, std::abs(ex(i) - qp.b_eq(i)));
    r.primal_scale = std::max({r.primal_scale, std::abs(ex(i)), std::abs(qp.b_eq(i))});
  }
  for (Eigen::Index i = 0; i < ix.size(); ++i) {
    r.primal = std::max({r.primal, qp.lb(i) - ix(i), ix(i) - qp.ub(i)});
    r.primal_scale = std::max(r.primal_scale, std::abs(ix(i)));
    if (std::isfinite(qp.lb(i))) r.primal_scale = std::max(r.primal_scale, std::abs(qp.lb(i)));
    if (std::isfinite(qp.ub(i))) r.primal_scale = std::max(r.primal_scale, std::abs(qp.ub(i)));
  }
  double mu_max = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double m = mu(i);
    mu_max = std::max(mu_max, std::abs(m));
    if (m > 0.0) {
      if (!std::isfinite(qp.ub(i))) {
        r.dual = std::max(r.dual, m);
      } else {
        r.complementarity = std::max(r.complementarity, m * std::abs(qp.ub(i) - ix(i)));
      }
    } else if (m < 0.0) {
      if (!std::isfinite(qp.lb(i))) {
        r.dual = std::max(r.dual, -m);
      } else {
        r.complementarity = std::max(r.complementarity, -m * std::abs(ix(i) - qp.lb(i)));
      }
    }
  }
  r.dual_scale = std::max(mu_max, lambda.size() ? lambda.cwiseAbs().maxCoeff() : 0.0);
  r.complementarity_scale = mu_max * (1.0 + r.primal_scale);
  return r;
}

struct QpOptions {
  double tolerance = 1e-6;
  int max_iterations = 4000;
  double regularization = 1e-9;
  double rho = 0.1;
  double sigma = 1e-6;
  double relaxation = 1.6;
  bool adaptive_rho = true;
  bool polish = true;
  bool check_convexity = true;
  int check_interval = 10;
  int stall_iterations = 200;
  int scaling_iterations = 10;
  // ADMM accuracy at which polishing is first attempted.
  double polish_trigger = 1e-2;
  double polish_decay = 0.5;
  int polish_interval = 50;
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;  // equality multipliers
  Eigen::VectorXd mu;      // inequality multipliers
  double objective = 0.0;
  QpStatus status = QpStatus::kMaxIterations;
  KktResiduals kkt;
  int iterations = 0;
  bool polished = false;
};

namespace detail {

/// State of one ADMM run on the equilibrated problem.
class AdmmSolver {
 public:
  AdmmSolver(const QpProblem& qp, const QpOptions& opt) : qp_(qp), opt_(opt) {
    n_ = qp.dimension();
    m_eq_ = qp.A_eq.rows();
    m_ = m_eq_ + qp.A_in.rows();
    P_ = 0.5 * (qp.H + qp.H.transpose());
    q_ = qp.g;
    A_.resize(m_, n_);
    l_.resize(m_);
    u_.resize(m_);
    if (m_eq_ > 0) {
      A_.topRows(m_eq_) = qp.A_eq;
      l_.head(m_eq_) = qp.b_eq;
      u_.head(m_eq_) = qp.b_eq;
    }
    if (m_ > m_eq_) {
      A_.bottomRows(m_ - m_eq_) = qp.A_in;
      l_.tail(m_ - m_eq_) = qp.lb;
      u_.tail(m_ - m_eq_) = qp.ub;
    }
    equilibrate();
  }

  QpSolution run() {
    x_ = Eigen::VectorXd::Zero(n_);
    z_ = Eigen::VectorXd::Zero(m_);
    y_ = Eigen::VectorXd::Zero(m_);
    rho_ = opt_.rho;
    set_rho_vector();
    factor();

    QpSolution best;
    double polish_level = opt_.polish_trigger;
    int last_polish = -opt_.polish_interval;
    double best_prim = kInf;
    int stall_counter = 0;
    Eigen::VectorXd x_prev, z_prev;
    int iter = 0;
    for (iter = 1; iter <= opt_.max_iterations; ++iter) {
      x_prev = x_;
      z_prev = z_;
      const Eigen::VectorXd rhs = prox() * x_prev - q_ + A_.transpose() * (rho_vec_.cwiseProduct(z_prev) - y_);
      const Eigen::VectorXd x_tilde = kkt_.solve(rhs);
      const Eigen::VectorXd z_tilde = A_ * x_tilde;
      x_ = opt_.relaxation * x_tilde + (1.0 - opt_.relaxation) * x_prev;
      const Eigen::VectorXd z_hat = opt_.relaxation * z_tilde + (1.0 - opt_.relaxation) * z_prev;
      const Eigen::VectorXd y_prev = y_;
      z_ = (z_hat + y_.cwiseQuotient(rho_vec_)).cwiseMax(l_).cwiseMin(u_);
      y_ = y_ + rho_vec_.cwiseProduct(z_hat - z_);

      if (iter % opt_.check_interval != 0 && iter != opt_.max_iterations) continue;

      const Residuals res = residuals();
      if (primal_infeasible(y_ - y_prev)) {
        QpSolution out = unscale(QpStatus::kInfeasible, iter);
        return out;
      }
      // Stall watchdog on the primal residual.
      if (res.prim < 0.99 * best_prim) {
        best_prim = res.prim;
        stall_counter = 0;
      } else {
        stall_counter += opt_.check_interval;
        if (stall_counter >= opt_.stall_iterations && res.prim > 1e3 * res.eps_prim &&
            res.dual <= res.eps_dual) {
          return unscale(QpStatus::kInfeasible, iter);
        }
      }

      if (opt_.polish && iter - last_polish >= opt_.polish_interval &&
          res.prim <= polish_level * (1.0 + res.prim_scale) &&
          res.dual <= polish_level * (1.0 + res.dual_scale)) {
        if (auto polished = polish(iter)) return *polished;
        last_polish = iter;
        polish_level = std::max(opt_.tolerance, polish_level * opt_.polish_decay);
      }
      if (res.prim <= res.eps_prim && res.dual <= res.eps_dual) {
        // A polished point is exact on its active set; prefer it to the
        // ADMM iterate when the active set can be identified.
        if (opt_.polish && last_polish != iter)
          if (auto polished = polish(iter)) return *polished;
        QpSolution out = unscale(QpStatus::kOptimal, iter);
        if (out.kkt.within(opt_.tolerance)) return out;
      }
      if (opt_.adaptive_rho) maybe_update_rho(res);
    }
    return unscale(QpStatus::kMaxIterations, opt_.max_iterations);
  }

 private:
  struct Residuals {
    double prim, dual, eps_prim, eps_dual, prim_scale, dual_scale;
    double ax_norm, z_norm, px_norm, aty_norm, q_norm;
  };

  void equilibrate() {
    D_ = Eigen::VectorXd::Ones(n_);
    E_ = Eigen::VectorXd::Ones(m_);
    c_ = 1.0;
    for (int it = 0; it < opt_.scaling_iterations; ++it) {
      Eigen::VectorXd dcol(n_), erow(m_);
      for (Eigen::Index j = 0; j < n_; ++j) {
        double nrm = P_.col(j).cwiseAbs().maxCoeff();
        if (m_ > 0) nrm = std::max(nrm, A_.col(j).cwiseAbs().maxCoeff());
        dcol(j) = scale_factor(nrm);
      }
      for (Eigen::Index i = 0; i < m_; ++i) erow(i) = scale_factor(A_.row(i).cwiseAbs().maxCoeff());
      P_ = dcol.asDiagonal() * P_ * dcol.asDiagonal();
      q_ = dcol.cwiseProduct(q_);
      A_ = erow.asDiagonal() * A_ * dcol.asDiagonal();
      D_ = D_.cwiseProduct(dcol);
      E_ = E_.cwiseProduct(erow);
    }
    double mean_col = 0.0;
    for (Eigen::Index j = 0; j < n_; ++j) mean_col += P_.col(j).cwiseAbs().maxCoeff();
    mean_col = n_ > 0 ? mean_col / n_ : 1.0;
    const double q_norm = q_.size() ? q_.cwiseAbs().maxCoeff() : 0.0;
    double gamma = std::max(mean_col, q_norm);
    gamma = std::clamp(gamma, 1e-4, 1e4);
    c_ = 1.0 / gamma;
    P_ *= c_;
    q_ *= c_;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (std::isfinite(l_(i))) l_(i) *= E_(i);
      if (std::isfinite(u_(i))) u_(i) *= E_(i);
    }
  }

  static double scale_factor(double nrm) {
    if (nrm < 1e-4) return 1.0;
    return 1.0 / std::sqrt(std::min(nrm, 1e4));
  }

  void set_rho_vector() {
    rho_vec_.resize(m_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      const bool equality = std::abs(u_(i) - l_(i)) < 1e-12;
      const bool loose = !std::isfinite(l_(i)) && !std::isfinite(u_(i));
      rho_vec_(i) = equality ? 1e3 * rho_ : (loose ? 1e-6 : rho_);
    }
  }

  // The regularization enters as part of the proximal weight, so it is
  // matched on the right-hand side and does not move the fixed point.
  double prox() const { return opt_.sigma + opt_.regularization; }

  void factor() {
    Eigen::MatrixXd K = P_;
    K.diagonal().array() += prox();
    if (m_ > 0) K.noalias() += A_.transpose() * rho_vec_.asDiagonal() * A_;
    kkt_.compute(K);
    if (kkt_.info() != Eigen::Success || !kkt_.matrixL().toDenseMatrix().allFinite())
      throw Error(ErrorCode::kNumericalBreakdown, "ADMM system factorization failed");
  }

  Residuals residuals() const {
    Residuals r{};
    const Eigen::VectorXd ax = A_ * x_;
    const Eigen::VectorXd px = P_ * x_;
    const Eigen::VectorXd aty = A_.transpose() * y_;
    const Eigen::VectorXd einv = E_.cwiseInverse();
    const Eigen::VectorXd dinv = D_.cwiseInverse();
    r.prim = m_ ? einv.cwiseProduct(ax - z_).cwiseAbs().maxCoeff() : 0.0;
    r.dual = n_ ? dinv.cwiseProduct(px + q_ + aty).cwiseAbs().maxCoeff() / c_ : 0.0;
    r.ax_norm = m_ ? einv.cwiseProduct(ax).cwiseAbs().maxCoeff() : 0.0;
    r.z_norm = m_ ? einv.cwiseProduct(z_).cwiseAbs().maxCoeff() : 0.0;
    r.px_norm = n_ ? dinv.cwiseProduct(px).cwiseAbs().maxCoeff() / c_ : 0.0;
    r.aty_norm = n_ ? dinv.cwiseProduct(aty).cwiseAbs().maxCoeff() / c_ : 0.0;
    r.q_norm = n_ ? dinv.cwiseProduct(q_).cwiseAbs().maxCoeff() / c_ : 0.0;
    r.prim_scale = std::max(r.ax_norm, r.z_norm);
    r.dual_scale = std::max({r.px_norm, r.aty_norm, r.q_norm});
    r.eps_prim = opt_.tolerance * (1.0 + r.prim_scale);
    r.eps_dual = opt_.tolerance * (1.0 + r.dual_scale);
    return r;
  }

  bool primal_infeasible(const Eigen::VectorXd& dy) const {
    if (m_ == 0) return false;
    const double eps = 1e-5;
    const Eigen::VectorXd dy_unscaled = E_.cwiseProduct(dy);
    const double norm_dy = dy_unscaled.cwiseAbs().maxCoeff();
    if (norm_dy < 1e-10) return false;
    const Eigen::VectorXd aty = D_.cwiseInverse().cwiseProduct(A_.transpose() * dy);
    if (aty.cwiseAbs().maxCoeff() > eps * norm_dy) return false;
    double support = 0.0;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const double v = dy(i);
      if (v > 0.0) {
        if (!std::isfinite(u_(i))) {
          if (dy_unscaled(i) > eps * norm_dy) return false;
          continue;
        }
        support += u_(i) * v;
      } else if (v < 0.0) {
        if (!std::isfinite(l_(i))) {
          if (-dy_unscaled(i) > eps * norm_dy) return false;
          continue;
        }
        support += l_(i) * v;
      }
    }
    return support < -eps * norm_dy;
  }

  void maybe_update_rho(const Residuals& r) {
    const double prim_rel = r.prim / (r.prim_scale + 1e-10);
    const double dual_rel = r.dual / (r.dual_scale + 1e-10);
    double new_rho = rho_ * std::sqrt(prim_rel / (dual_rel + 1e-10));
    new_rho = std::clamp(new_rho, 1e-6, 1e6);
    if (new_rho > 5.0 * rho_ || new_rho < 0.2 * rho_) {
      rho_ = new_rho;
      set_rho_vector();
      factor();
    }
  }

  /// Solves the equality-constrained problem on the active set guessed from
  /// the ADMM iterate, then repairs the guess a few times by releasing rows
  /// with wrong-sign multipliers and adding violated ones.
  std::optional<QpSolution> polish(int iter) {
    // 0 inactive, -1 at lower bound, +1 at upper bound, 2 equality row.
    std::vector<int> state(static_cast<std::size_t>(m_), 0);
    for (Eigen::Index i = 0; i < m_; ++i) {
      auto& st = state[static_cast<std::size_t>(i)];
      if (std::abs(u_(i) - l_(i)) < 1e-12) st = 2;
      else if (std::isfinite(l_(i)) && z_(i) - l_(i) < -y_(i)) st = -1;
      else if (std::isfinite(u_(i)) && u_(i) - z_(i) < y_(i)) st = 1;
    }
    const Eigen::VectorXd x_save = x_, z_save = z_, y_save = y_;
    for (int round = 0; round < 8; ++round) {
      if (!solve_active_set(state)) break;
      QpSolution out = unscale(QpStatus::kOptimal, iter);
      out.polished = true;
      if (out.kkt.within(opt_.tolerance)) return out;
      const Eigen::VectorXd ax = A_ * x_;
      bool changed = false;
      const double slack = 1e-9;
      for (Eigen::Index i = 0; i < m_; ++i) {
        auto& st = state[static_cast<std::size_t>(i)];
        if (st == -1 && y_(i) > 0.0) { st = 0; changed = true; }
        else if (st == 1 && y_(i) < 0.0) { st = 0; changed = true; }
        else if (st == 0 && ax(i) < l_(i) - slack * (1.0 + std::abs(l_(i)))) { st = -1; changed = true; }
        else if (st == 0 && ax(i) > u_(i) + slack * (1.0 + std::abs(u_(i)))) { st = 1; changed = true; }
      }
      if (!changed) break;
    }
    x_ = x_save;
    z_ = z_save;
    y_ = y_save;
    return std::nullopt;
  }

  bool solve_active_set(const std::vector<int>& state) {
    std::vector<Eigen::Index> active;
    std::vector<double> targets;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const int st = state[static_cast<std::size_t>(i)];
      if (st == 0) continue;
      active.push_back(i);
      targets.push_back(st == 1 ? u_(i) : l_(i));
    }
    const auto na = static_cast<Eigen::Index>(active.size());
    const double delta = 1e-7;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n_ + na, n_ + na);
    K.topLeftCorner(n_, n_) = P_;
    Eigen::VectorXd rhs(n_ + na);
    rhs.head(n_) = -q_;
    for (Eigen::Index k = 0; k < na; ++k) {
      K.block(n_ + k, 0, 1, n_) = A_.row(active[k]);
      K.block(0, n_ + k, n_, 1) = A_.row(active[k]).transpose();
      rhs(n_ + k) = targets[static_cast<std::size_t>(k)];
    }
    Eigen::MatrixXd K_reg = K;
    K_reg.topLeftCorner(n_, n_).diagonal().array() += delta;
    K_reg.bottomRightCorner(na, na).diagonal().array() -= delta;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K_reg);
    Eigen::VectorXd sol = lu.solve(rhs);
    for (int r = 0; r < 5; ++r) sol += lu.solve(rhs - K * sol);
    if (!sol.allFinite()) return false;
    x_ = sol.head(n_);
    y_.setZero();
    for (Eigen::Index k = 0; k < na; ++k) y_(active[k]) = sol(n_ + k);
    z_ = (A_ * x_).cwiseMax(l_).cwiseMin(u_);
    return true;
  }

  QpSolution unscale(QpStatus status, int iter) const {
    QpSolution out;
    out.status = status;
    out.iterations = iter;
    out.x = D_.cwiseProduct(x_);
    const Eigen::VectorXd y = E_.cwiseProduct(y_) / c_;
    out.lambda = y.head(m_eq_);
    out.mu = y.tail(m_ - m_eq_);
    out.kkt = check_kkt(qp_, out.x, out.lambda, out.mu);
    return out;
  }

  const QpProblem& qp_;
  QpOptions opt_;
  Eigen::Index n_ = 0, m_ = 0, m_eq_ = 0;
  Eigen::MatrixXd P_, A_;
  Eigen::VectorXd q_, l_, u_;
  Eigen::VectorXd D_, E_;
  double c_ = 1.0;
  double rho_ = 0.1;
  Eigen::VectorXd rho_vec_;
  Eigen::LLT<Eigen::MatrixXd> kkt_;
  Eigen::VectorXd x_, z_, y_;

};

}  // namespace detail

/// Operator-splitting (ADMM) solve with Ruiz equilibration, adaptive rho,
/// primal infeasibility certificates and active-set polishing.
inline QpSolution solve(const QpProblem& qp, const QpOptions& options = {}) {
  qp.check_dimensions();
  if (options.check_convexity) qp.check_convexity();
  detail::AdmmSolver solver(qp, options);
  QpSolution out = solver.run();
  out.objective = qp.objective(out.x);
  out.kkt = check_kkt(qp, out.x, out.lambda, out.mu);
  if (out.status == QpStatus::kOptimal && !out.kkt.within(options.tolerance))
    out.status = QpStatus::kMaxIterations;
  return out;
}

}  // namespace stvplan
