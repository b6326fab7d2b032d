#ifndef REFBCM_TRIAL_DATA_HPP
#define REFBCM_TRIAL_DATA_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "refbcm/gaussian.hpp"

namespace refbcm {

enum class Arm : int { reference = 0, active = 1 };

std::string_view to_string(Arm arm);
Arm parse_arm(std::string_view label);

inline constexpr Arm kArms[] = {Arm::reference, Arm::active};

/// One patient's outcome vector over the schedule. Missing entries are NaN.
/// `last_observed` is D, the last on-treatment visit; it is kept when the
/// record is later completed by imputation so the pattern stays known.
struct PatientRecord {
  std::string id;
  Arm arm = Arm::reference;
  Eigen::VectorXd outcomes;
  int last_observed = 0;

  bool complete() const { return outcomes.allFinite(); }
  bool dropped_out() const { return last_observed < outcomes.size() - 1; }
};

class TrialDataset {
 public:
  TrialDataset() = default;
  /// Validates record lengths and the two-patients-per-arm minimum.
  TrialDataset(VisitSchedule schedule, std::vector<PatientRecord> patients);

  const VisitSchedule& schedule() const { return schedule_; }
  const std::vector<PatientRecord>& patients() const { return patients_; }
  Index visits() const { return schedule_.size(); }
  Index jmax() const { return schedule_.jmax(); }
  std::size_t size() const { return patients_.size(); }
  std::size_t count(Arm arm) const;

  /// Copy without patient `index` (jackknife helper).
  TrialDataset without(std::size_t index) const;

 private:
  VisitSchedule schedule_;
  std::vector<PatientRecord> patients_;
};

/// Number of patients per pattern D = 0..j_max in one arm.
struct IcePatternCounts {
  Arm arm = Arm::active;
  Eigen::VectorXi counts;

  int total() const { return counts.sum(); }
};

/// Last contiguously observed index; throws ValidationError for intermittent
/// gaps or a missing baseline.
int monotone_last_observed(const Eigen::VectorXd& outcomes, std::string_view id);

TrialDataset read_csv(std::istream& in, const VisitSchedule& schedule);
TrialDataset load_csv(const std::filesystem::path& path, const VisitSchedule& schedule);
void write_csv(std::ostream& out, const TrialDataset& data);

IcePatternCounts pattern_counts(const TrialDataset& data, Arm arm);

}  // namespace refbcm

#endif  // REFBCM_TRIAL_DATA_HPP
