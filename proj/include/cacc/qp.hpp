#pragma once

// Dense convex QP solver for small problems:
//
//   minimize    1/2 z' H z + g' z + c
//   subject to  A_eq z  = b_eq
//               A_in z <= b_in
//
// Equality rows are eliminated with a null-space basis from a column-pivoted
// QR of A_eq'. The reduced problem is solved with the Goldfarb-Idnani dual
// active-set method, which needs no feasible starting point and terminates on
// an exact active set. Multipliers are recovered in the full space so KKT
// residuals can be reported against the original data.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace cacc::qp {

struct Problem {
  Eigen::MatrixXd hessian;   // H, symmetric PSD
  Eigen::VectorXd linear;    // g
  double constant = 0.0;     // c
  Eigen::MatrixXd eq_matrix; // A_eq
  Eigen::VectorXd eq_rhs;    // b_eq
  Eigen::MatrixXd in_matrix; // A_in
  Eigen::VectorXd in_rhs;    // b_in

  Eigen::Index num_variables() const { return hessian.rows(); }

  double objective(const Eigen::VectorXd& z) const {
    return 0.5 * z.dot(hessian * z) + linear.dot(z) + constant;
  }

  void validate() const {
    const auto n = hessian.rows();
    if (hessian.cols() != n || linear.size() != n)
      throw std::invalid_argument("qp: hessian/linear dimension mismatch");
    if (eq_matrix.rows() != eq_rhs.size() || (eq_matrix.rows() > 0 && eq_matrix.cols() != n))
      throw std::invalid_argument("qp: equality constraint dimension mismatch");
    if (in_matrix.rows() != in_rhs.size() || (in_matrix.rows() > 0 && in_matrix.cols() != n))
      throw std::invalid_argument("qp: inequality constraint dimension mismatch");
    if (!hessian.allFinite() || !linear.allFinite() || !eq_matrix.allFinite() ||
        !eq_rhs.allFinite() || !in_matrix.allFinite() || !in_rhs.allFinite())
      throw std::invalid_argument("qp: non-finite problem data");
    if (!hessian.isApprox(hessian.transpose(), 1e-12) && hessian.norm() > 0.0)
      throw std::invalid_argument("qp: hessian not symmetric");
  }
};

enum class Status { Optimal, Infeasible };

struct Solution {
  Status status = Status::Infeasible;
  Eigen::VectorXd z;
  Eigen::VectorXd eq_multipliers;  // lambda, stationarity: H z + g + A_eq' lambda + A_in' mu = 0
  Eigen::VectorXd in_multipliers;  // mu >= 0
  std::vector<int> active;         // active inequality rows
  double objective = 0.0;
  int iterations = 0;
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double primal_in = 0.0;         // max(0, A_in z - b_in)
  double dual_feasibility = 0.0;  // max(0, -mu)
  double complementarity = 0.0;   // max |mu_i (A_in z - b_in)_i|

  double max() const {
    return std::max({stationarity, primal_eq, primal_in, dual_feasibility, complementarity});
  }
};

inline KktResiduals kkt_residuals(const Problem& p, const Solution& s) {
  KktResiduals r;
  Eigen::VectorXd grad = p.hessian * s.z + p.linear;
  if (p.eq_matrix.rows() > 0) {
    grad += p.eq_matrix.transpose() * s.eq_multipliers;
    r.primal_eq = (p.eq_matrix * s.z - p.eq_rhs).lpNorm<Eigen::Infinity>();
  }
  if (p.in_matrix.rows() > 0) {
    grad += p.in_matrix.transpose() * s.in_multipliers;
    const Eigen::VectorXd slack = p.in_matrix * s.z - p.in_rhs;
    r.primal_in = std::max(0.0, slack.maxCoeff());
    r.dual_feasibility = std::max(0.0, -s.in_multipliers.minCoeff());
    r.complementarity = (s.in_multipliers.array() * slack.array()).abs().maxCoeff();
  }
  r.stationarity = grad.lpNorm<Eigen::Infinity>();
  return r;
}

namespace detail {

// Goldfarb-Idnani on: min 1/2 x'Gx + a'x  s.t.  C x <= d.
// Returns false if infeasible. `mu` receives multipliers per row of C.
class DualActiveSet {
 public:
  DualActiveSet(const Eigen::MatrixXd& G, const Eigen::VectorXd& a, const Eigen::MatrixXd& C,
                const Eigen::VectorXd& d)
      : G_(G), a_(a), C_(C), d_(d), n_(G.rows()), m_(C.rows()) {}

  bool solve(Eigen::VectorXd& x, Eigen::VectorXd& mu, std::vector<int>& active, int& iterations) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const double eps = std::numeric_limits<double>::epsilon();

    Eigen::LLT<Eigen::MatrixXd> llt(G_);
    if (llt.info() != Eigen::Success) throw std::runtime_error("qp: reduced hessian not positive definite");
    const Eigen::MatrixXd L = llt.matrixL();
    // J = L^{-T}, so J J' = G^{-1}
    J_ = L.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n_, n_));
    R_ = Eigen::MatrixXd::Zero(n_, n_);
    r_norm_ = 1.0;
    iq_ = 0;
    A_.assign(static_cast<std::size_t>(n_ + 1), -1);
    u_ = Eigen::VectorXd::Zero(n_ + 1);
    Eigen::VectorXd d(n_), z(n_), r(n_ + 1);

    x = -llt.solve(a_);
    iterations = 0;

    // Scale used for the "no violation" test.
    const double tol_scale = 1.0 + (m_ > 0 ? d_.cwiseAbs().maxCoeff() : 0.0);
    std::vector<bool> is_active(static_cast<std::size_t>(m_), false);
    std::vector<bool> excluded(static_cast<std::size_t>(m_), false);
    const int max_iterations = 50 * static_cast<int>(n_ + m_) + 100;

    while (true) {
      if (++iterations > max_iterations) throw std::runtime_error("qp: iteration limit reached");
      // Most violated inactive constraint; s = d - C x >= 0 means satisfied.
      int p = -1;
      double worst = -1e-13 * tol_scale;
      for (Eigen::Index i = 0; i < m_; ++i) {
        if (is_active[i] || excluded[i]) continue;
        const double s = d_(i) - C_.row(i).dot(x);
        if (s < worst) {
          worst = s;
          p = static_cast<int>(i);
        }
      }
      if (p < 0) break;

      const Snapshot saved{x, u_, A_, iq_, J_, R_, is_active};
      const Eigen::VectorXd np = -C_.row(p).transpose();  // normal in ">=" form
      double s_p = d_(p) - C_.row(p).dot(x);
      u_(iq_) = 0.0;
      A_[static_cast<std::size_t>(iq_)] = p;

      while (true) {
        d = J_.transpose() * np;
        z = J_.rightCols(n_ - iq_) * d.tail(n_ - iq_);
        for (Eigen::Index i = iq_ - 1; i >= 0; --i) {
          double sum = d(i);
          for (Eigen::Index j = i + 1; j < iq_; ++j) sum -= R_(i, j) * r(j);
          r(i) = sum / R_(i, i);
        }

        double t1 = inf;
        Eigen::Index drop = -1;
        for (Eigen::Index k = 0; k < iq_; ++k) {
          if (r(k) > 0.0) {
            const double ratio = u_(k) / r(k);
            if (ratio < t1) {
              t1 = ratio;
              drop = k;
            }
          }
        }
        double t2 = inf;
        const double znp = z.dot(np);
        if (z.lpNorm<Eigen::Infinity>() > eps * 1e2 && znp > 0.0) {
          t2 = -s_p / znp;
          if (t2 < 0.0) t2 = 0.0;
        }
        const double t = std::min(t1, t2);
        if (t >= inf) return false;

        if (t2 >= inf) {
          for (Eigen::Index k = 0; k < iq_; ++k) u_(k) -= t * r(k);
          u_(iq_) += t;
          is_active[A_[static_cast<std::size_t>(drop)]] = false;
          drop_constraint(drop);
          continue;
        }

        x += t * z;
        for (Eigen::Index k = 0; k < iq_; ++k) u_(k) -= t * r(k);
        u_(iq_) += t;

        if (t == t2) {
          if (!add_constraint(d)) {
            // Numerically dependent on the active set: roll back and skip it.
            x = saved.x;
            u_ = saved.u;
            A_ = saved.A;
            iq_ = saved.iq;
            J_ = saved.J;
            R_ = saved.R;
            is_active = saved.is_active;
            excluded[p] = true;
          } else {
            is_active[p] = true;
          }
          break;
        }
        is_active[A_[static_cast<std::size_t>(drop)]] = false;
        drop_constraint(drop);
        s_p = d_(p) - C_.row(p).dot(x);
      }
    }

    mu = Eigen::VectorXd::Zero(m_);
    active.clear();
    for (Eigen::Index k = 0; k < iq_; ++k) {
      const int row = A_[static_cast<std::size_t>(k)];
      mu(row) = u_(k);
      active.push_back(row);
    }
    std::sort(active.begin(), active.end());
    return true;
  }

 private:
  struct Snapshot {
    Eigen::VectorXd x, u;
    std::vector<int> A;
    Eigen::Index iq;
    Eigen::MatrixXd J, R;
    std::vector<bool> is_active;
  };

  bool add_constraint(Eigen::VectorXd& d) {
    const double eps = std::numeric_limits<double>::epsilon();
    for (Eigen::Index j = n_ - 1; j >= iq_ + 1; --j) {
      double cc = d(j - 1), ss = d(j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d(j) = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d(j - 1) = -h;
      } else {
        d(j - 1) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Eigen::Index k = 0; k < n_; ++k) {
        const double a = J_(k, j - 1), b = J_(k, j);
        J_(k, j - 1) = a * cc + b * ss;
        J_(k, j) = xny * (a + J_(k, j - 1)) - b;
      }
    }
    ++iq_;
    R_.col(iq_ - 1).head(iq_) = d.head(iq_);
    if (std::abs(d(iq_ - 1)) <= eps * r_norm_) {
      --iq_;
      R_.col(iq_).setZero();
      return false;
    }
    r_norm_ = std::max(r_norm_, std::abs(d(iq_ - 1)));
    return true;
  }

  // Removes active-set position `pos`; the pending constraint at position iq_
  // shifts down with the rest.
  void drop_constraint(Eigen::Index pos) {
    for (Eigen::Index i = pos; i < iq_ - 1; ++i) {
      A_[static_cast<std::size_t>(i)] = A_[static_cast<std::size_t>(i + 1)];
      u_(i) = u_(i + 1);
      R_.col(i) = R_.col(i + 1);
    }
    A_[static_cast<std::size_t>(iq_ - 1)] = A_[static_cast<std::size_t>(iq_)];
    u_(iq_ - 1) = u_(iq_);
    A_[static_cast<std::size_t>(iq_)] = -1;
    u_(iq_) = 0.0;
    R_.col(iq_ - 1).setZero();
    --iq_;
    for (Eigen::Index j = pos; j < iq_; ++j) {
      double cc = R_(j, j), ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Eigen::Index k = j + 1; k < iq_; ++k) {
        const double a = R_(j, k), b = R_(j + 1, k);
        R_(j, k) = a * cc + b * ss;
        R_(j + 1, k) = xny * (a + R_(j, k)) - b;
      }
      for (Eigen::Index k = 0; k < n_; ++k) {
        const double a = J_(k, j), b = J_(k, j + 1);
        J_(k, j) = a * cc + b * ss;
        J_(k, j + 1) = xny * (J_(k, j) + a) - b;
      }
    }
  }

  const Eigen::MatrixXd& G_;
  const Eigen::VectorXd& a_;
  const Eigen::MatrixXd& C_;
  const Eigen::VectorXd& d_;
  Eigen::Index n_, m_;
  Eigen::MatrixXd J_, R_;
  double r_norm_ = 1.0;
  Eigen::Index iq_ = 0;
  std::vector<int> A_;
  Eigen::VectorXd u_;
};

}  // namespace detail

inline Solution solve(const Problem& problem) {
  problem.validate();
  const auto n = problem.num_variables();
  const auto p = problem.eq_matrix.rows();
  const auto m = problem.in_matrix.rows();

  // Null-space parametrisation z = z0 + Z y.
  Eigen::VectorXd z0 = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd Z = Eigen::MatrixXd::Identity(n, n);
  if (p > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(problem.eq_matrix.transpose());
    qr.setThreshold(1e-12);
    const auto rank = qr.rank();
    if (rank < p) {
      // Redundant rows are fine only if consistent.
      const Eigen::VectorXd trial =
          problem.eq_matrix.completeOrthogonalDecomposition().solve(problem.eq_rhs);
      if ((problem.eq_matrix * trial - problem.eq_rhs).lpNorm<Eigen::Infinity>() > 1e-9) {
        Solution s;
        s.status = Status::Infeasible;
        return s;
      }
    }
    const Eigen::MatrixXd Q = qr.householderQ();
    Z = Q.rightCols(n - rank);
    // A_eq = (Q R P')' = P R' Q'  ->  particular solution in range(Q_1).
    z0 = problem.eq_matrix.completeOrthogonalDecomposition().solve(problem.eq_rhs);
  }

  const auto nr = Z.cols();
  Eigen::MatrixXd Hr = Z.transpose() * problem.hessian * Z;
  Hr = 0.5 * (Hr + Hr.transpose()).eval();
  const Eigen::VectorXd gr = Z.transpose() * (problem.hessian * z0 + problem.linear);
  Eigen::MatrixXd Cr(m, nr);
  Eigen::VectorXd dr(m);
  if (m > 0) {
    Cr = problem.in_matrix * Z;
    dr = problem.in_rhs - problem.in_matrix * z0;
  }

  // Regularise a singular reduced Hessian so the dual method applies; the
  // reported objective and residuals use the unregularised data.
  if (nr > 0) {
    const double scale = std::max(1.0, Hr.diagonal().cwiseAbs().maxCoeff());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Hr);
    const double min_pivot = ldlt.vectorD().minCoeff();
    if (ldlt.info() != Eigen::Success || min_pivot <= 1e-11 * scale)
      Hr.diagonal().array() += 1e-10 * scale;
  }

  Solution sol;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(nr), mu = Eigen::VectorXd::Zero(m);
  if (nr > 0) {
    detail::DualActiveSet das(Hr, gr, Cr, dr);
    if (!das.solve(y, mu, sol.active, sol.iterations)) {
      sol.status = Status::Infeasible;
      return sol;
    }
  } else if (m > 0 && (dr.array() < -1e-9).any()) {
    sol.status = Status::Infeasible;
    return sol;
  }

  sol.status = Status::Optimal;
  sol.z = z0 + Z * y;
  sol.in_multipliers = mu;
  sol.objective = problem.objective(sol.z);
  if (p > 0) {
    // A_eq' lambda = -(H z + g + A_in' mu), least squares.
    Eigen::VectorXd rhs = -(problem.hessian * sol.z + problem.linear);
    if (m > 0) rhs -= problem.in_matrix.transpose() * mu;
    sol.eq_multipliers = problem.eq_matrix.transpose().colPivHouseholderQr().solve(rhs);
  } else {
    sol.eq_multipliers = Eigen::VectorXd::Zero(0);
  }
  return sol;
}

}  // namespace cacc::qp
