#include "refbcm/report.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>
#include <toml.hpp>

#include "refbcm/error.hpp"
#include "refbcm/text.hpp"

namespace refbcm {

ResultRecord make_record(std::string method, const PooledEstimate& est) {
  return {std::move(method), est.point, est.se, est.ci_low, est.ci_high, est.m, "normal"};
}

ResultRecord make_record(std::string method, const JackknifeEstimate& est, long n) {
  return {std::move(method), est.point, est.se, est.point - kZ975 * est.se, est.point + kZ975 * est.se, n, "normal"};
}

ResultRecord make_record(std::string method, const EstimateSummary& est) {
  return {std::move(method),
          est.point,
          est.sd,
          est.ci_low,
          est.ci_high,
          static_cast<long>(est.draws),
          est.interval == IntervalKind::percentile ? "percentile" : "normal"};
}

void write_records_csv(std::ostream& out, const std::vector<ResultRecord>& records) {
  out << "method,point,se,ci_low,ci_high,m,interval\n";
  for (const auto& r : records)
    out << csv_field(r.method) << ',' << to_text(r.point) << ',' << to_text(r.se) << ',' << to_text(r.ci_low) << ','
        << to_text(r.ci_high) << ',' << r.m << ',' << r.interval << '\n';
}

void write_records_json(std::ostream& out, const std::vector<ResultRecord>& records) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : records)
    arr.push_back({{"method", r.method},
                   {"point", r.point},
                   {"se", r.se},
                   {"ci_low", r.ci_low},
                   {"ci_high", r.ci_high},
                   {"m", r.m},
                   {"interval", r.interval}});
  out << arr.dump(2) << '\n';
}

void write_records_table(std::ostream& out, const std::vector<ResultRecord>& records) {
  std::size_t width = 6;
  for (const auto& r : records) width = std::max(width, r.method.size());
  const auto flags = out.flags();
  out << std::left << std::setw(static_cast<int>(width)) << "method" << std::right << std::setw(10) << "point"
      << std::setw(9) << "se" << std::setw(22) << "95% interval" << std::setw(8) << "m" << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& r : records) {
    std::ostringstream ci;
    ci << std::fixed << std::setprecision(3) << '(' << r.ci_low << ", " << r.ci_high << ')';
    out << std::left << std::setw(static_cast<int>(width)) << r.method << std::right << std::setw(10) << r.point
        << std::setw(9) << r.se << std::setw(22) << ci.str() << std::setw(8) << r.m << '\n';
  }
  out.flags(flags);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::write(const std::filesystem::path& path) const {
  toml::table run;
  run.insert("command", command);
  toml::array args;
  for (const auto& a : argv) args.push_back(a);
  run.insert("argv", args);
  run.insert("seed", static_cast<std::int64_t>(seed));
  run.insert("version", version);
  run.insert("started", started);
  run.insert("finished", finished);
  toml::array outs;
  for (const auto& o : outputs) outs.push_back(o);
  run.insert("outputs", outs);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write manifest " + path.string());
  // Configuration first so the manifest itself loads as a scenario file.
  if (!config_toml.empty()) out << config_toml << '\n';
  out << toml::table{{"run", run}} << '\n';
}

}  // namespace refbcm
