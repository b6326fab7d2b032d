#ifndef REFBCM_SIM_HPP
#define REFBCM_SIM_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "refbcm/bcm.hpp"
#include "refbcm/gaussian.hpp"
#include "refbcm/mmrm.hpp"
#include "refbcm/rbi.hpp"
#include "refbcm/rng.hpp"
#include "refbcm/trial_data.hpp"

namespace refbcm {

enum class Hypothesis { null, alternative };
enum class IceLevel { low, high };

std::string_view to_string(Hypothesis h);
std::string_view to_string(IceLevel l);
Hypothesis parse_hypothesis(std::string_view text);
IceLevel parse_ice_level(std::string_view text);

/// Logistic discontinuation hazard at one visit, per arm (index by Arm).
struct DropoutStep {
  Index visit = 2;
  double intercept = 0.0;
  double beta_base[2] = {0.0, 0.0};
  double beta_prev[2] = {0.0, 0.0};
};

/// A dropout event at visit j makes visit j and later missing (D = j - 1).
struct DropoutModel {
  std::vector<DropoutStep> steps;

  void validate(Index visits) const;
  double hazard(const DropoutStep& step, Arm arm, double baseline, double previous) const;

  /// Coefficients of the built-in weeks 8..26 design with a common intercept.
  static DropoutModel builtin(double intercept);
};

/// One entry of the estimator suite: "rubin:j2r", "condmean:cir",
/// "bcm:point:0", "bcm:normal:0,0.5", ...
struct EstimatorSpec {
  enum class Family { rubin, condmean, bcm };

  Family family = Family::bcm;
  RbiMethod method = RbiMethod::j2r;  // rubin / condmean
  K0Prior prior;                      // bcm

  std::string label() const;
  /// Fixed k0 behind the truth for rubin/condmean: 0 for J2R, 1 for CIR.
  double assumed_k0() const { return method == RbiMethod::j2r ? 0.0 : 1.0; }
};

EstimatorSpec parse_estimator(std::string_view text);

struct ScenarioConfig {
  std::string name = "scenario";
  Hypothesis hypothesis = Hypothesis::alternative;
  IceLevel ice_level = IceLevel::high;
  VisitSchedule schedule;
  MvnParams<double> active;
  MvnParams<double> reference;
  DropoutModel dropout;
  int n_per_arm = 200;
  int replications = 1000;
  std::uint64_t seed = 20240101;
  int imputations = 100;
  long oracle_draws = 1'000'000;
  /// Earliest pattern in the Dirichlet support for the BCM.
  Index pattern_min = 1;
  GibbsConfig gibbs;
  std::vector<EstimatorSpec> estimators;

  /// Law each arm is simulated from. Under the null both arms follow the
  /// active law, so the null keeps the alternative's dropout experience.
  const MvnParams<double>& law(Arm arm) const {
    return arm == Arm::active || hypothesis == Hypothesis::null ? active : reference;
  }

  void validate() const;

  /// Built-in simulation design for one hypothesis and ICE level.
  static ScenarioConfig builtin(Hypothesis hypothesis, IceLevel level);
};

/// Default estimator suite: both reference-based families and the BCM
/// with point and normal priors.
std::vector<EstimatorSpec> default_estimators();

TrialDataset simulate_trial(const ScenarioConfig& scenario, Rng& rng);

struct TrueEffect {
  double a = 0.0;
  double b = 0.0;
  Eigen::VectorXd pi;
  /// Per-patient variance pieces for the Monte Carlo SE of a + k b.
  double var_a = 0.0;
  double var_b = 0.0;
  double cov_ab = 0.0;
  long n_mc = 0;

  double effect(double k0) const { return a + k0 * b; }
  double mcse(double k0) const;
};

/// Pattern probabilities from n_mc simulated active-arm patients, combined
/// with the scenario's true arm differences.
TrueEffect true_effect_oracle(const ScenarioConfig& scenario, long n_mc, Rng& rng);

struct EstimateRow {
  std::string estimator;
  double point = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double k0_true = 0.0;
  double theta_true = 0.0;
};

struct ReplicationResult {
  int index = 0;
  std::uint64_t seed = 0;
  std::vector<EstimateRow> rows;
};

/// Stream for replication `index`; depends only on (master seed, index).
Rng replication_rng(std::uint64_t master_seed, int index);

/// The simulated dataset behind replication `index`.
TrialDataset replication_data(const ScenarioConfig& scenario, int index);

ReplicationResult run_replication(const ScenarioConfig& scenario, const TrueEffect& truth, int index);

struct EstimatorMetrics {
  std::string estimator;
  int replications = 0;
  double mean = 0.0;
  double true_mean = 0.0;
  double true_sd = 0.0;
  double bias = 0.0;
  double emp_se = 0.0;
  double est_se = 0.0;
  double coverage = 0.0;     // percent
  double rejection = 0.0;    // percent of intervals excluding 0
  double mcse_mean = 0.0;
  double mcse_coverage = 0.0;  // percent
};

struct MetricsReport {
  std::string scenario;
  std::vector<EstimatorMetrics> estimators;

  const EstimatorMetrics& at(std::string_view estimator) const;
};

/// Emp.SE and the true-value SD are NaN when there is one replication.
MetricsReport compute_metrics(const std::vector<ReplicationResult>& results, std::string scenario = {});

struct StudyResult {
  TrueEffect truth;
  std::vector<ReplicationResult> replications;
  MetricsReport metrics;
};

/// Oracle stream shared by every study of a scenario.
Rng oracle_rng(std::uint64_t master_seed);

/// Runs all replications on up to `threads` workers. Results are ordered by
/// index and do not depend on the thread count.
StudyResult run_study(const ScenarioConfig& scenario, unsigned threads = 1);

void write_replications_csv(std::ostream& out, const std::vector<ReplicationResult>& results);
void write_summary_csv(std::ostream& out, const MetricsReport& report);

/// Parses rows written by write_replications_csv for one replication.
std::vector<EstimateRow> read_replication_rows(std::istream& in, int index);

}  // namespace refbcm

#endif  // REFBCM_SIM_HPP
