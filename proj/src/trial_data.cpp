#include "refbcm/trial_data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace refbcm {

std::string_view to_string(Arm arm) { return arm == Arm::active ? "active" : "reference"; }

Arm parse_arm(std::string_view label) {
  if (label == "active") return Arm::active;
  if (label == "reference") return Arm::reference;
  throw ParseError("unknown arm label '" + std::string(label) + "' (expected reference or active)");
}

TrialDataset::TrialDataset(VisitSchedule schedule, std::vector<PatientRecord> patients)
    : schedule_(std::move(schedule)), patients_(std::move(patients)) {
  for (const auto& p : patients_) {
    if (p.outcomes.size() != schedule_.size())
      throw ValidationError("patient " + p.id + ": outcome vector length does not match the visit schedule");
    if (p.last_observed < 0 || p.last_observed > schedule_.jmax())
      throw ValidationError("patient " + p.id + ": last observed visit out of range");
  }
  for (Arm arm : kArms) {
    if (count(arm) < 2)
      throw ValidationError("dataset needs at least two patients in the " + std::string(to_string(arm)) + " arm");
  }
}

std::size_t TrialDataset::count(Arm arm) const {
  std::size_t n = 0;
  for (const auto& p : patients_) n += p.arm == arm;
  return n;
}

TrialDataset TrialDataset::without(std::size_t index) const {
  std::vector<PatientRecord> rest;
  rest.reserve(patients_.size() - 1);
  for (std::size_t i = 0; i < patients_.size(); ++i)
    if (i != index) rest.push_back(patients_[i]);
  return TrialDataset(schedule_, std::move(rest));
}

int monotone_last_observed(const Eigen::VectorXd& outcomes, std::string_view id) {
  if (outcomes.size() == 0 || !std::isfinite(outcomes(0)))
    throw ValidationError("patient " + std::string(id) + ": baseline (visit 0) is missing");
  int last = 0;
  bool gap = false;
  for (Index j = 1; j < outcomes.size(); ++j) {
    if (std::isfinite(outcomes(j))) {
      if (gap)
        throw ValidationError("patient " + std::string(id) + ": intermittent missingness (visit " + std::to_string(j) +
                              " observed after a missing visit)");
      last = static_cast<int>(j);
    } else {
      gap = true;
    }
  }
  return last;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_value(const std::string& text, std::size_t line_no) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError("line " + std::to_string(line_no) + ": cannot parse outcome '" + text + "'");
  return v;
}

}  // namespace

TrialDataset read_csv(std::istream& in, const VisitSchedule& schedule) {
  const Index p = schedule.size();
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV input");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM

  auto header = split_fields(line);
  for (auto& h : header) h = trim(h);
  std::vector<std::string> expected{"id", "arm"};
  for (Index j = 0; j < p; ++j) expected.push_back("y" + std::to_string(j));
  if (header != expected) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
    throw ParseError("CSV header does not match the schedule; expected '" + want + "'");
  }

  std::vector<PatientRecord> patients;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (static_cast<Index>(fields.size()) != p + 2)
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(p + 2) + " fields, got " +
                       std::to_string(fields.size()));
    PatientRecord rec;
    rec.id = trim(fields[0]);
    rec.arm = parse_arm(trim(fields[1]));
    rec.outcomes.resize(p);
    for (Index j = 0; j < p; ++j) {
      const std::string cell = trim(fields[static_cast<std::size_t>(j + 2)]);
      rec.outcomes(j) = cell.empty() ? std::numeric_limits<double>::quiet_NaN() : parse_value(cell, line_no);
    }
    rec.last_observed = monotone_last_observed(rec.outcomes, rec.id);
    patients.push_back(std::move(rec));
  }
  return TrialDataset(schedule, std::move(patients));
}

TrialDataset load_csv(const std::filesystem::path& path, const VisitSchedule& schedule) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_csv(in, schedule);
}

void write_csv(std::ostream& out, const TrialDataset& data) {
  out << "id,arm";
  for (Index j = 0; j < data.visits(); ++j) out << ",y" << j;
  out << '\n';
  std::ostringstream cell;
  for (const auto& p : data.patients()) {
    out << p.id << ',' << to_string(p.arm);
    for (Index j = 0; j < data.visits(); ++j) {
      out << ',';
      if (std::isfinite(p.outcomes(j))) {
        cell.str({});
        cell << std::setprecision(17) << p.outcomes(j);
        out << cell.str();
      }
    }
    out << '\n';
  }
}

IcePatternCounts pattern_counts(const TrialDataset& data, Arm arm) {
  IcePatternCounts out;
  out.arm = arm;
  out.counts = Eigen::VectorXi::Zero(data.visits());
  for (const auto& p : data.patients())
    if (p.arm == arm) ++out.counts(p.last_observed);
  return out;
}

}  // namespace refbcm
