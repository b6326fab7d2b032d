#ifndef REFBCM_TESTS_ORACLES_HPP
#define REFBCM_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "refbcm/gaussian.hpp"
#include "refbcm/trial_data.hpp"

namespace oracles {

using namespace refbcm;

struct EmFit {
  Eigen::VectorXd mean[2];
  Eigen::MatrixXd cov[2];
};

/// Plain EM for MVN data with missing values; arm-specific means and either
/// per-arm or pooled covariance. With common_baseline the mean step becomes a
/// conditional maximization under equal visit-0 means (ECM).
inline EmFit em_fit(const TrialDataset& data, bool pooled, bool common_baseline = false) {
  const Index p = data.visits();
  EmFit fit;
  for (int a = 0; a < 2; ++a) {
    fit.mean[a] = Eigen::VectorXd::Zero(p);
    fit.cov[a] = Eigen::MatrixXd::Identity(p, p);
  }
  for (int iter = 0; iter < 20000; ++iter) {
    Eigen::VectorXd s1[2] = {Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p)};
    Eigen::MatrixXd s2[2] = {Eigen::MatrixXd::Zero(p, p), Eigen::MatrixXd::Zero(p, p)};
    double n[2] = {0, 0};
    for (const auto& rec : data.patients()) {
      const int a = static_cast<int>(rec.arm);
      const Index k = rec.last_observed + 1;
      Eigen::VectorXd ey = rec.outcomes;
      Eigen::MatrixXd extra = Eigen::MatrixXd::Zero(p, p);
      if (k < p) {
        const Eigen::MatrixXd& s = fit.cov[a];
        const Eigen::MatrixXd s11 = s.topLeftCorner(k, k);
        const Eigen::MatrixXd s21 = s.bottomLeftCorner(p - k, k);
        const Eigen::MatrixXd b = s21 * s11.inverse();
        ey.tail(p - k) = fit.mean[a].tail(p - k) + b * (rec.outcomes.head(k) - fit.mean[a].head(k));
        extra.bottomRightCorner(p - k, p - k) = s.bottomRightCorner(p - k, p - k) - b * s21.transpose();
      }
      s1[a] += ey;
      s2[a] += ey * ey.transpose() + extra;
      n[a] += 1;
    }
    EmFit next;
    Eigen::MatrixXd pooled_cov = Eigen::MatrixXd::Zero(p, p);
    for (int a = 0; a < 2; ++a) next.mean[a] = s1[a] / n[a];
    if (common_baseline) {
      // Weighted projection onto mu_a(0) == mu_r(0) under the current covariances.
      const double d = next.mean[1](0) - next.mean[0](0);
      const double v = fit.cov[1](0, 0) / n[1] + fit.cov[0](0, 0) / n[0];
      next.mean[1] -= fit.cov[1].col(0) / n[1] * (d / v);
      next.mean[0] += fit.cov[0].col(0) / n[0] * (d / v);
    }
    for (int a = 0; a < 2; ++a) {
      const Eigen::VectorXd bar = s1[a] / n[a];
      const Eigen::MatrixXd scatter = s2[a] - n[a] * bar * bar.transpose();
      const Eigen::MatrixXd around = scatter + n[a] * (bar - next.mean[a]) * (bar - next.mean[a]).transpose();
      next.cov[a] = around / n[a];
      pooled_cov += around;
    }
    if (pooled) next.cov[0] = next.cov[1] = pooled_cov / (n[0] + n[1]);
    double change = 0;
    for (int a = 0; a < 2; ++a)
      change = std::max({change, (next.mean[a] - fit.mean[a]).cwiseAbs().maxCoeff(),
                         (next.cov[a] - fit.cov[a]).cwiseAbs().maxCoeff()});
    fit = next;
    if (change < 1e-12) break;
  }
  return fit;
}

struct GridMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Moments of the unobserved coordinates of a 3-D normal, by brute-force
/// integration of the unnormalized joint density over +-9 marginal SDs.
inline GridMoments grid_conditional(const MvnParams<double>& params, const std::vector<Index>& observed,
                                    const Eigen::VectorXd& values) {
  const Eigen::MatrixXd prec = params.cov.inverse();
  std::vector<Index> free;
  for (Index i = 0; i < 3; ++i)
    if (std::find(observed.begin(), observed.end(), i) == observed.end()) free.push_back(i);
  const int n = free.size() == 1 ? 20001 : 601;
  const int n2 = free.size() == 1 ? 1 : n;

  Eigen::Vector3d x;
  for (std::size_t k = 0; k < observed.size(); ++k) x(observed[k]) = values(static_cast<Index>(k));
  auto lo = [&](Index i) { return params.mean(i) - 9.0 * std::sqrt(params.cov(i, i)); };
  auto step = [&](Index i) { return 18.0 * std::sqrt(params.cov(i, i)) / (n - 1); };

  const Index q = static_cast<Index>(free.size());
  double z = 0;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd u(q);
  for (int i = 0; i < n; ++i) {
    x(free[0]) = lo(free[0]) + i * step(free[0]);
    for (int k = 0; k < n2; ++k) {
      if (q == 2) x(free[1]) = lo(free[1]) + k * step(free[1]);
      const Eigen::Vector3d r = x - params.mean;
      const double w = std::exp(-0.5 * r.dot(prec * r));
      for (Index a = 0; a < q; ++a) u(a) = x(free[static_cast<std::size_t>(a)]);
      z += w;
      m1 += w * u;
      m2 += w * u * u.transpose();
    }
  }
  GridMoments out;
  out.mean = m1 / z;
  out.cov = m2 / z - out.mean * out.mean.transpose();
  return out;
}

}  // namespace oracles

#endif  // REFBCM_TESTS_ORACLES_HPP
