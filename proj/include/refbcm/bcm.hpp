#ifndef REFBCM_BCM_HPP
#define REFBCM_BCM_HPP

#include <optional>
#include <string>
#include <string_view>

#include "refbcm/gaussian.hpp"
#include "refbcm/mmrm.hpp"
#include "refbcm/rng.hpp"
#include "refbcm/trial_data.hpp"

namespace refbcm {

// ---------------------------------------------------------------------------
// Maintained-effect structures
// ---------------------------------------------------------------------------

enum class EffectModelKind { constant, decay };

/// How much of the visit-D arm difference survives at later visits: a
/// constant fraction k0, or k1^(v_u - v_D) decaying with elapsed time.
struct MaintainedEffectModel {
  EffectModelKind kind = EffectModelKind::constant;
  VisitSchedule schedule;  // only read by the decay model

  static MaintainedEffectModel constant() { return {}; }
  static MaintainedEffectModel decay(VisitSchedule schedule) { return {EffectModelKind::decay, std::move(schedule)}; }

  /// Weight on the visit-j arm difference at visit u > j, for parameter k.
  double weight(Index j, Index u, double k) const;
};

/// K_j = k0 C_j: (j_max - j) x (j + 1), zero except a last column of k0.
Eigen::MatrixXd carry_forward_K(Index j, Index jmax, double k0);

/// Last column holds k1^(v_u - v_j) for post-ICE visit u; other columns zero.
Eigen::MatrixXd decay_K(Index j, Index jmax, double k1, const VisitSchedule& schedule);

/// e^1_j: row of length j_max - j picking the final visit.
Eigen::RowVectorXd extraction_row(Index j, Index jmax);

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

enum class IntervalKind { normal_approx, percentile };

std::string_view to_string(IntervalKind k);

/// Prior on the maintained-effect parameter. Parameter slots by kind:
///   point            a = value
///   normal           a = mean, b = sd
///   triangular       a = min, b = mode, c = max
///   truncated_normal a = untruncated mean, b = sd, c = lower bound
struct K0Prior {
  enum class Kind { point, normal, triangular, truncated_normal };

  Kind kind = Kind::point;
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  static K0Prior point(double value) { return {Kind::point, value, 0.0, 0.0}; }
  static K0Prior normal(double mean, double sd);
  static K0Prior triangular(double min, double mode, double max);
  static K0Prior truncated_normal(double mean, double sd, double lower = 0.0);

  void validate() const;
  double mean() const;
  double variance() const;
  /// Normal approximation for point/normal; percentile otherwise.
  IntervalKind default_interval() const;
  /// Canonical `kind:p1[,p2[,p3]]` form accepted by parse_k0_prior.
  std::string to_string() const;
};

/// Grammar: point:v | normal:mean,sd | triangular:mode,max |
/// triangular:min,mode,max | truncnorm:mean,sd[,lower]. Triangular with two
/// parameters takes min = 0.
K0Prior parse_k0_prior(std::string_view spec);

/// Inverse CDF of the prior; u in (0, 1). Point priors ignore u.
double k0_quantile(const K0Prior& prior, double u);

/// i.i.d. prior draws. Normal priors use mean + sd * z so that draws from
/// priors differing only in sd are matched when the stream is the same.
Eigen::VectorXd draw_k0(const K0Prior& prior, Index draws, Rng& rng);

// ---------------------------------------------------------------------------
// Pattern probabilities
// ---------------------------------------------------------------------------

/// L x (j_max + 1) matrix of Dirichlet(counts + 1) draws over the patterns
/// d_min..j_max; columns below d_min are zero.
Eigen::MatrixXd draw_pi(const IcePatternCounts& counts, Index draws, Rng& rng, Index d_min = 0);

/// Earliest pattern with a nonzero count.
Index earliest_pattern(const IcePatternCounts& counts);

// ---------------------------------------------------------------------------
// Treatment-policy effect
// ---------------------------------------------------------------------------

/// Per draw: theta = A + B * multiplier. For the constant model the
/// multiplier is k0; for the decay model the k1 weights are folded into B and
/// the multiplier is 1.
struct EffectDraws {
  Eigen::VectorXd theta;
  Eigen::VectorXd a;
  Eigen::VectorXd b;
  Eigen::VectorXd multiplier;

  Index size() const { return theta.size(); }
};

/// Effect for a single parameter set, evaluated term by term through the
/// K_j matrices and extraction rows.
double effect_via_K(const Eigen::VectorXd& active_mean, const Eigen::VectorXd& reference_mean,
                    const Eigen::RowVectorXd& pi, double k, const MaintainedEffectModel& model);

EffectDraws effect_draws(const PosteriorDraws& posterior, const Eigen::MatrixXd& pi, const Eigen::VectorXd& k,
                         const MaintainedEffectModel& model);

struct EstimateSummary {
  double point = 0.0;
  double sd = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  IntervalKind interval = IntervalKind::normal_approx;
  Index draws = 0;
};

EstimateSummary summarize(const Eigen::VectorXd& theta, IntervalKind interval);

/// Mean trajectory for an active-arm patient whose last on-treatment visit
/// is `last_observed`.
Eigen::VectorXd implied_trajectory(const MvnParams<double>& active, const MvnParams<double>& reference, int last_observed,
                                   const MaintainedEffectModel& model, double k);

// ---------------------------------------------------------------------------
// End-to-end
// ---------------------------------------------------------------------------

struct BcmOptions {
  K0Prior prior;
  MaintainedEffectModel model;
  std::optional<IntervalKind> interval;  // prior default when empty
  Index d_min = -1;                      // earliest observed active pattern when negative
};

/// Posterior summary from MMRM draws, a Dirichlet posterior on the active
/// arm's patterns and prior draws for k, all of length posterior.size().
/// `pi_rng` and `k_rng` are separate streams so that prior sweeps can share
/// the pattern draws.
EstimateSummary bcm_estimate(const TrialDataset& data, const PosteriorDraws& posterior, const BcmOptions& options,
                             Rng& pi_rng, Rng& k_rng);

}  // namespace refbcm

#endif  // REFBCM_BCM_HPP
