#ifndef REFBCM_MMRM_HPP
#define REFBCM_MMRM_HPP

#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <utility>
#include <vector>

#include "refbcm/gaussian.hpp"
#include "refbcm/rng.hpp"
#include "refbcm/trial_data.hpp"

namespace refbcm {

/// Per-arm unstructured means always; the covariance is either pooled
/// across arms or estimated separately for each arm.
enum class CovarianceStructure { shared, per_arm };

std::string_view to_string(CovarianceStructure s);
CovarianceStructure parse_covariance_structure(std::string_view text);

/// Baseline (visit 0) mean: one value for both arms, as randomization
/// implies, or free per arm.
enum class BaselineMean { common, per_arm };

std::string_view to_string(BaselineMean b);
BaselineMean parse_baseline_mean(std::string_view text);

struct MleFit {
  MvnParams<double> reference;
  MvnParams<double> active;
  double log_likelihood = 0.0;
  int n_reference = 0;
  int n_active = 0;
  CovarianceStructure structure = CovarianceStructure::shared;
  BaselineMean baseline = BaselineMean::common;

  const MvnParams<double>& arm(Arm a) const { return a == Arm::active ? active : reference; }
};

/// Exact ML estimate for one arm under monotone missingness, via sequential
/// OLS of each visit on all earlier visits. Divisor n (not n - 1).
MvnParams<double> fit_monotone_mle(const TrialDataset& data, Arm arm);

/// Both arms; with the shared structure the slopes and residual variances
/// are pooled and the intercepts stay arm-specific. A common baseline mean
/// constrains only the visit-0 marginal, so the factorization stays exact.
MleFit fit_mle(const TrialDataset& data, CovarianceStructure structure = CovarianceStructure::shared,
               BaselineMean baseline = BaselineMean::common);

/// Observed-data log-likelihood of the dataset under per-arm parameters.
double observed_log_likelihood(const TrialDataset& data, const MvnParams<double>& reference,
                               const MvnParams<double>& active);

struct GibbsConfig {
  int n_total = 5200;
  int n_burn = 200;
  int thin = 1;
  std::uint64_t seed = 1;
  /// Prior degrees of freedom are dim + iw_df_offset; must exceed 1 so the
  /// prior mean exists.
  double iw_df_offset = 2.0;
  CovarianceStructure structure = CovarianceStructure::shared;
  BaselineMean baseline = BaselineMean::common;

  int kept() const { return (n_total - n_burn) / thin; }
  void validate() const;
};

struct ParameterDraw {
  MvnParams<double> reference;
  MvnParams<double> active;

  const MvnParams<double>& arm(Arm a) const { return a == Arm::active ? active : reference; }
};

struct PosteriorDraws {
  std::vector<ParameterDraw> draws;
  GibbsConfig config;
  /// Running mean of the kept mean-vector draws, per arm.
  Eigen::VectorXd running_mean_reference;
  Eigen::VectorXd running_mean_active;

  std::size_t size() const { return draws.size(); }
};

/// Draw from IW(df, scale). Returns (Sigma, F) with Sigma = F F^T.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_inverse_wishart(double df, const Eigen::MatrixXd& scale, Rng& rng);

/// Data-augmentation Gibbs sampler: flat prior on the means, inverse-Wishart
/// prior on the covariance centred on the completers' ML covariance.
PosteriorDraws gibbs_sample(const TrialDataset& data, const GibbsConfig& config);

/// CSV dump with columns draw,arm,param,visit_i,visit_j,value.
void write_draws_csv(std::ostream& out, const PosteriorDraws& draws);

}  // namespace refbcm

#endif  // REFBCM_MMRM_HPP
