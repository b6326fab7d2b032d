#ifndef REFBCM_RBI_HPP
#define REFBCM_RBI_HPP

#include <cmath>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "refbcm/gaussian.hpp"
#include "refbcm/mmrm.hpp"
#include "refbcm/rng.hpp"
#include "refbcm/trial_data.hpp"

namespace refbcm {

enum class RbiMethod { j2r, cir };

std::string_view to_string(RbiMethod m);
RbiMethod parse_rbi_method(std::string_view text);

/// Joint law of (pre-ICE, post-ICE) outcomes for an active-arm patient whose
/// last on-treatment visit is `pattern`.
struct ImputationDistribution {
  int pattern = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Returns nullopt when D = j_max (nothing to impute).
///
/// Mean: active through D, then the reference means (J2R) or the reference
/// means shifted by the visit-D arm difference (CIR). Covariance: the active
/// pre-ICE block, with the post-ICE block following the reference arm's
/// conditional law given the pre-ICE outcomes.
std::optional<ImputationDistribution> build_imputation_distribution(RbiMethod method, const MvnParams<double>& active,
                                                                    const MvnParams<double>& reference, int last_observed);

/// M completed datasets, the i-th imputed from the i-th of m evenly spaced
/// posterior draws. Reference-arm dropouts are imputed under their own arm.
std::vector<TrialDataset> impute_multiple(const TrialDataset& data, const PosteriorDraws& draws, RbiMethod method,
                                          int m, Rng& rng);

/// Missing blocks replaced by their conditional means at the MLE.
TrialDataset conditional_mean_impute(const TrialDataset& data, const MleFit& mle, RbiMethod method);

struct AncovaResult {
  double point = 0.0;
  double variance = 0.0;
  /// Set when the baseline column was collinear and a plain difference in
  /// final-visit means was returned instead.
  bool fallback = false;
};

/// OLS of the final visit on intercept, baseline and the active indicator.
AncovaResult analyze_ancova(const TrialDataset& completed);

struct PooledEstimate {
  double point = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int m = 0;
  double within = 0.0;
  double between = 0.0;
};

inline constexpr double kZ975 = 1.959963984540054;

PooledEstimate rubins_rules(std::span<const double> points, std::span<const double> variances);

struct JackknifeEstimate {
  double point = 0.0;
  double se = 0.0;
  std::vector<double> leave_one_out;
};

/// Delete-one jackknife: se = sqrt((n-1)/n * sum_i (theta_{-i} - mean)^2).
template <typename LeaveOneOut>
JackknifeEstimate jackknife(std::size_t n, double full_point, LeaveOneOut&& estimate_without) {
  if (n < 2) throw InvalidParameter("jackknife needs at least two units");
  JackknifeEstimate out;
  out.point = full_point;
  out.leave_one_out.resize(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.leave_one_out[i] = estimate_without(i);
    mean += out.leave_one_out[i];
  }
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : out.leave_one_out) ss += (v - mean) * (v - mean);
  out.se = std::sqrt(static_cast<double>(n - 1) / static_cast<double>(n) * ss);
  return out;
}

/// Conditional-mean imputation + ANCOVA point estimate.
double conditional_mean_estimate(const TrialDataset& data, RbiMethod method,
                                 CovarianceStructure structure = CovarianceStructure::shared,
                                 BaselineMean baseline = BaselineMean::common);

/// Jackknife over patients of the conditional-mean pipeline; every
/// leave-one-out replicate refits the monotone MLE.
JackknifeEstimate jackknife_se(const TrialDataset& data, RbiMethod method,
                               CovarianceStructure structure = CovarianceStructure::shared,
                               BaselineMean baseline = BaselineMean::common);

/// Same as jackknife_se for several methods, sharing the MLE refits.
std::vector<JackknifeEstimate> jackknife_se(const TrialDataset& data, std::span<const RbiMethod> methods,
                                            CovarianceStructure structure = CovarianceStructure::shared,
                                            BaselineMean baseline = BaselineMean::common);

/// Impute m datasets, analyse each with ANCOVA, pool with Rubin's rules.
PooledEstimate rubin_analysis(const TrialDataset& data, const PosteriorDraws& draws, RbiMethod method, int m, Rng& rng);

}  // namespace refbcm

#endif  // REFBCM_RBI_HPP
