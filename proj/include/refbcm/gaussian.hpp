#ifndef REFBCM_GAUSSIAN_HPP
#define REFBCM_GAUSSIAN_HPP

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "refbcm/error.hpp"
#include "refbcm/rng.hpp"

namespace refbcm {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

/// Visit times in weeks; index 0 is baseline, the last index is j_max.
class VisitSchedule {
 public:
  VisitSchedule() = default;

  explicit VisitSchedule(std::vector<double> times) : times_(std::move(times)) {
    if (times_.size() < 2) throw InvalidParameter("visit schedule needs at least two visits");
    for (std::size_t i = 1; i < times_.size(); ++i) {
      if (!(times_[i] > times_[i - 1]))
        throw InvalidParameter("visit times must be strictly increasing");
    }
  }

  VisitSchedule(std::initializer_list<double> times) : VisitSchedule(std::vector<double>(times)) {}

  const std::vector<double>& times() const { return times_; }
  double time(Index j) const { return times_.at(static_cast<std::size_t>(j)); }
  Index size() const { return static_cast<Index>(times_.size()); }
  Index jmax() const { return size() - 1; }

  friend bool operator==(const VisitSchedule&, const VisitSchedule&) = default;

 private:
  std::vector<double> times_;
};

template <typename Scalar>
struct MvnParams {
  Vector<Scalar> mean;
  Matrix<Scalar> cov;

  Index dim() const { return mean.size(); }
};

/// Law of the unobserved block given the observed block.
template <typename Scalar>
struct ConditionalMvn {
  Vector<Scalar> mean;
  Matrix<Scalar> cov;
  /// Sigma_uo * Sigma_oo^{-1}
  Matrix<Scalar> regression;
};

namespace detail {

template <typename Scalar>
Scalar pivot_floor(const Matrix<Scalar>& cov) {
  return Scalar(1e-10) * std::max(cov.diagonal().maxCoeff(), Scalar(0));
}

}  // namespace detail

/// Cholesky factorization behind the positive-definite gate: fails when
/// Eigen's LLT fails or any squared pivot falls below 1e-10 * max diagonal.
template <typename Scalar>
class CheckedCholesky {
 public:
  explicit CheckedCholesky(const Matrix<Scalar>& cov) : llt_(cov) {
    ok_ = cov.rows() == cov.cols() && cov.rows() > 0 && llt_.info() == Eigen::Success;
    if (ok_) {
      const Vector<Scalar> pivots = llt_.matrixL().toDenseMatrix().diagonal().array().square();
      min_pivot_ = pivots.minCoeff();
      max_pivot_ = pivots.maxCoeff();
      ok_ = std::isfinite(static_cast<double>(min_pivot_)) && min_pivot_ >= detail::pivot_floor(cov) &&
            min_pivot_ > Scalar(0);
    }
  }

  bool ok() const { return ok_; }
  const Eigen::LLT<Matrix<Scalar>>& llt() const { return llt_; }
  Matrix<Scalar> matrixL() const { return llt_.matrixL(); }

  /// Ratio of the largest to smallest squared pivot (a cheap condition proxy).
  double pivot_ratio() const {
    return ok_ ? static_cast<double>(max_pivot_ / min_pivot_) : std::numeric_limits<double>::infinity();
  }

  void require(const char* what) const {
    if (ok_) return;
    std::ostringstream msg;
    msg << what << ": matrix is not positive definite";
    if (llt_.info() == Eigen::Success) msg << " (smallest pivot " << static_cast<double>(min_pivot_) << ")";
    throw NumericError(msg.str());
  }

 private:
  Eigen::LLT<Matrix<Scalar>> llt_;
  bool ok_ = false;
  Scalar min_pivot_ = Scalar(0);
  Scalar max_pivot_ = Scalar(0);
};

template <typename Derived>
bool is_positive_definite(const Eigen::MatrixBase<Derived>& cov) {
  using Scalar = typename Derived::Scalar;
  if (!cov.isApprox(cov.transpose(), Scalar(1e-9))) return false;
  return CheckedCholesky<Scalar>(cov.eval()).ok();
}

/// Spatial-power (continuous-time AR(1)) covariance:
/// entry (i, j) = sd_i sd_j rho^{|t_i - t_j| / scale_weeks}.
template <typename Derived>
Matrix<typename Derived::Scalar> spatial_power_cov(const Eigen::MatrixBase<Derived>& sds,
                                                   const VisitSchedule& schedule,
                                                   typename Derived::Scalar rho,
                                                   typename Derived::Scalar scale_weeks) {
  using Scalar = typename Derived::Scalar;
  const Index p = sds.size();
  if (p != schedule.size()) throw InvalidParameter("spatial_power_cov: sds length does not match schedule");
  if ((sds.array() <= Scalar(0)).any()) throw InvalidParameter("spatial_power_cov: standard deviations must be positive");
  if (!(rho > Scalar(0) && rho < Scalar(1))) throw InvalidParameter("spatial_power_cov: rho must lie in (0, 1)");
  if (!(scale_weeks > Scalar(0))) throw InvalidParameter("spatial_power_cov: scale must be positive");

  Matrix<Scalar> cov(p, p);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) {
      const Scalar lag = std::abs(Scalar(schedule.time(i) - schedule.time(j))) / scale_weeks;
      cov(i, j) = sds(i) * sds(j) * std::pow(rho, lag);
    }
    cov(i, i) = sds(i) * sds(i);
  }
  return cov;
}

/// Regression and residual covariance of the trailing block on the leading
/// `k` components. This is the monotone-pattern special case of
/// condition_mvn and is what the imputation code evaluates per pattern.
template <typename Scalar>
struct LeadingConditional {
  Index leading = 0;
  Matrix<Scalar> regression;  // (p-k) x k
  Matrix<Scalar> cov;         // (p-k) x (p-k)
  Matrix<Scalar> cov_factor;  // lower Cholesky factor of cov

  template <typename Derived>
  Vector<Scalar> mean(const Vector<Scalar>& mu, const Eigen::MatrixBase<Derived>& leading_values) const {
    return mu.tail(mu.size() - leading) + regression * (leading_values - mu.head(leading));
  }
};

template <typename Scalar>
LeadingConditional<Scalar> condition_on_leading(const Matrix<Scalar>& cov, Index k) {
  const Index p = cov.rows();
  if (k <= 0 || k >= p) throw InvalidParameter("condition_on_leading: leading block must be a proper prefix");
  CheckedCholesky<Scalar> chol(cov.topLeftCorner(k, k));
  chol.require("conditioning block");

  LeadingConditional<Scalar> out;
  out.leading = k;
  const Matrix<Scalar> cross = cov.bottomLeftCorner(p - k, k);
  out.regression = chol.llt().solve(cross.transpose()).transpose();
  out.cov = cov.bottomRightCorner(p - k, p - k) - out.regression * cross.transpose();
  out.cov = Scalar(0.5) * (out.cov + out.cov.transpose()).eval();
  Eigen::LLT<Matrix<Scalar>> residual(out.cov);
  if (residual.info() != Eigen::Success) throw NumericError("condition_on_leading: residual covariance is not positive definite");
  out.cov_factor = residual.matrixL();
  return out;
}

/// Conditional law of the components not listed in `observed_idx`.
template <typename Scalar>
ConditionalMvn<Scalar> condition_mvn(const MvnParams<Scalar>& params, std::span<const Index> observed_idx,
                                     const Vector<Scalar>& observed_values) {
  const Index p = params.dim();
  const Index no = static_cast<Index>(observed_idx.size());
  if (no == 0 || no >= p) throw InvalidParameter("condition_mvn: observed set must be a nonempty proper subset");
  if (observed_values.size() != no) throw InvalidParameter("condition_mvn: observed values length mismatch");

  std::vector<char> is_obs(static_cast<std::size_t>(p), 0);
  for (Index i : observed_idx) {
    if (i < 0 || i >= p || is_obs[static_cast<std::size_t>(i)]) throw InvalidParameter("condition_mvn: bad observed index");
    is_obs[static_cast<std::size_t>(i)] = 1;
  }
  std::vector<Index> unobserved;
  for (Index i = 0; i < p; ++i)
    if (!is_obs[static_cast<std::size_t>(i)]) unobserved.push_back(i);
  const Index nu = static_cast<Index>(unobserved.size());

  Matrix<Scalar> s_oo(no, no), s_uo(nu, no), s_uu(nu, nu);
  Vector<Scalar> mu_o(no), mu_u(nu);
  for (Index a = 0; a < no; ++a) {
    mu_o(a) = params.mean(observed_idx[a]);
    for (Index b = 0; b < no; ++b) s_oo(a, b) = params.cov(observed_idx[a], observed_idx[b]);
  }
  for (Index a = 0; a < nu; ++a) {
    mu_u(a) = params.mean(unobserved[a]);
    for (Index b = 0; b < no; ++b) s_uo(a, b) = params.cov(unobserved[a], observed_idx[b]);
    for (Index b = 0; b < nu; ++b) s_uu(a, b) = params.cov(unobserved[a], unobserved[b]);
  }

  CheckedCholesky<Scalar> chol(s_oo);
  if (!chol.ok()) {
    std::ostringstream msg;
    msg << "condition_mvn: observed covariance block is singular (pivot ratio " << chol.pivot_ratio() << ")";
    throw NumericError(msg.str());
  }

  ConditionalMvn<Scalar> out;
  out.regression = chol.llt().solve(s_uo.transpose()).transpose();
  out.mean = mu_u + out.regression * (observed_values - mu_o);
  out.cov = s_uu - out.regression * s_uo.transpose();
  out.cov = Scalar(0.5) * (out.cov + out.cov.transpose()).eval();
  return out;
}

/// n draws as the rows of an n x p matrix.
template <typename Scalar>
Matrix<Scalar> sample_mvn(const MvnParams<Scalar>& params, Rng& rng, Index n) {
  const Index p = params.dim();
  Matrix<Scalar> out(n, p);
  if (n == 0) return out;
  CheckedCholesky<Scalar> chol(params.cov);
  chol.require("sample_mvn");
  const Matrix<Scalar> lower = chol.matrixL();
  Vector<Scalar> z(p);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < p; ++k) z(k) = Scalar(rng.normal());
    out.row(i) = (params.mean + lower.template triangularView<Eigen::Lower>() * z).transpose();
  }
  return out;
}

}  // namespace refbcm

#endif  // REFBCM_GAUSSIAN_HPP
