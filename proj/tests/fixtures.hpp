#ifndef REFBCM_TESTS_FIXTURES_HPP
#define REFBCM_TESTS_FIXTURES_HPP

#include <limits>
#include <string>
#include <vector>

#include "refbcm/gaussian.hpp"
#include "refbcm/rng.hpp"
#include "refbcm/trial_data.hpp"

namespace fixtures {

using namespace refbcm;

/// Monotone dataset: MVN outcomes per arm, then MCAR dropout with
/// probability `hazard` at each visit from `first_dropout` on.
inline TrialDataset monotone_dataset(const MvnParams<double>& reference, const MvnParams<double>& active,
                                     int n_per_arm, double hazard, Rng& rng, Index first_dropout = 1) {
  const Index p = reference.dim();
  std::vector<double> weeks;
  for (Index j = 0; j < p; ++j) weeks.push_back(static_cast<double>(4 * j));
  std::vector<PatientRecord> patients;
  for (Arm arm : kArms) {
    const Eigen::MatrixXd y = sample_mvn(arm == Arm::active ? active : reference, rng, n_per_arm);
    for (int i = 0; i < n_per_arm; ++i) {
      PatientRecord rec;
      rec.id = std::string(arm == Arm::active ? "a" : "r") + std::to_string(i);
      rec.arm = arm;
      rec.outcomes = y.row(i).transpose();
      rec.last_observed = static_cast<int>(p - 1);
      for (Index j = first_dropout; j < p; ++j) {
        if (rng.uniform() < hazard) {
          rec.last_observed = static_cast<int>(j - 1);
          rec.outcomes.tail(p - j).setConstant(std::numeric_limits<double>::quiet_NaN());
          break;
        }
      }
      patients.push_back(std::move(rec));
    }
  }
  return TrialDataset(VisitSchedule(weeks), std::move(patients));
}

inline MvnParams<double> ar_params(const Eigen::VectorXd& mean, double sd, double rho) {
  const Index p = mean.size();
  Eigen::MatrixXd cov(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j) cov(i, j) = sd * sd * std::pow(rho, std::abs(static_cast<double>(i - j)));
  return {mean, cov};
}

}  // namespace fixtures

#endif  // REFBCM_TESTS_FIXTURES_HPP
