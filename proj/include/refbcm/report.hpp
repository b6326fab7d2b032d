#ifndef REFBCM_REPORT_HPP
#define REFBCM_REPORT_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "refbcm/bcm.hpp"
#include "refbcm/rbi.hpp"

namespace refbcm {

/// One estimate as printed by the command-line tools.
struct ResultRecord {
  std::string method;
  double point = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  /// Imputations (Rubin), patients (jackknife) or posterior draws (BCM).
  long m = 0;
  std::string interval = "normal";
};

ResultRecord make_record(std::string method, const PooledEstimate& est);
ResultRecord make_record(std::string method, const JackknifeEstimate& est, long n);
ResultRecord make_record(std::string method, const EstimateSummary& est);

void write_records_csv(std::ostream& out, const std::vector<ResultRecord>& records);
void write_records_json(std::ostream& out, const std::vector<ResultRecord>& records);
/// Aligned plain-text table for the terminal.
void write_records_table(std::ostream& out, const std::vector<ResultRecord>& records);

/// Everything needed to rerun a command: the argument vector, the resolved
/// configuration and the outputs it wrote.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_toml;  // resolved configuration, TOML
  std::uint64_t seed = 0;
  std::string version;
  std::string started;  // UTC, ISO 8601
  std::string finished;
  std::vector<std::string> outputs;

  void write(const std::filesystem::path& path) const;
};

std::string utc_timestamp();

}  // namespace refbcm

#endif  // REFBCM_REPORT_HPP
