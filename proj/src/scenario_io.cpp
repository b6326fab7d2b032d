#include "refbcm/scenario_io.hpp"

#include <fstream>
#include <sstream>

#include <toml.hpp>

namespace refbcm {

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(std::string_view key, std::string_view what) const {
    throw ParseError(source_ + ": '" + std::string(key) + "' " + std::string(what));
  }

  double number(toml::node_view<const toml::node> node, std::string_view key) const {
    if (auto v = node.value<double>()) return *v;
    fail(key, "must be a number");
  }

  std::int64_t integer(toml::node_view<const toml::node> node, std::string_view key) const {
    if (auto v = node.value<std::int64_t>()) return *v;
    fail(key, "must be an integer");
  }

  std::string string(toml::node_view<const toml::node> node, std::string_view key) const {
    if (auto v = node.value<std::string>()) return *v;
    fail(key, "must be a string");
  }

  std::vector<double> numbers(toml::node_view<const toml::node> node, std::string_view key) const {
    const toml::array* arr = node.as_array();
    if (!arr) fail(key, "must be an array of numbers");
    std::vector<double> out;
    for (const auto& el : *arr) {
      auto v = el.value<double>();
      if (!v) fail(key, "must be an array of numbers");
      out.push_back(*v);
    }
    return out;
  }

  Eigen::VectorXd vector(toml::node_view<const toml::node> node, std::string_view key, Index size) const {
    const auto v = numbers(node, key);
    if (static_cast<Index>(v.size()) != size) fail(key, "must have one entry per visit");
    return Eigen::Map<const Eigen::VectorXd>(v.data(), size);
  }

  Eigen::MatrixXd matrix(toml::node_view<const toml::node> node, std::string_view key, Index size) const {
    const toml::array* rows = node.as_array();
    if (!rows || static_cast<Index>(rows->size()) != size) fail(key, "must be a square array with one row per visit");
    Eigen::MatrixXd m(size, size);
    for (Index i = 0; i < size; ++i) {
      const auto row = vector(toml::node_view<const toml::node>(rows->get(static_cast<std::size_t>(i))), key, size);
      m.row(i) = row.transpose();
    }
    return m;
  }

 private:
  std::string source_;
};

std::pair<double, double> arm_pair(const Reader& r, toml::node_view<const toml::node> node, std::string_view key) {
  const auto v = r.numbers(node, key);
  if (v.size() != 2) r.fail(key, "must be [reference, active]");
  return {v[0], v[1]};
}

}  // namespace

ScenarioConfig parse_scenario(std::string_view toml_text, std::string_view source) {
  toml::table doc;
  try {
    doc = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ':' << e.source().begin.line << ": " << e.description();
    throw ParseError(msg.str());
  }
  const Reader r{std::string(source)};
  const toml::node_view<const toml::node> root{doc};

  const Hypothesis hyp = root["hypothesis"] ? parse_hypothesis(r.string(root["hypothesis"], "hypothesis"))
                                             : Hypothesis::alternative;
  const IceLevel ice = root["ice_level"] ? parse_ice_level(r.string(root["ice_level"], "ice_level")) : IceLevel::high;
  ScenarioConfig s = ScenarioConfig::builtin(hyp, ice);

  if (root["name"]) s.name = r.string(root["name"], "name");
  if (root["n_per_arm"]) s.n_per_arm = static_cast<int>(r.integer(root["n_per_arm"], "n_per_arm"));
  if (root["replications"]) s.replications = static_cast<int>(r.integer(root["replications"], "replications"));
  if (root["seed"]) {
    const auto seed = r.integer(root["seed"], "seed");
    if (seed < 0) r.fail("seed", "must be non-negative");
    s.seed = static_cast<std::uint64_t>(seed);
  }
  if (root["imputations"]) s.imputations = static_cast<int>(r.integer(root["imputations"], "imputations"));
  if (root["oracle_draws"]) s.oracle_draws = static_cast<long>(r.integer(root["oracle_draws"], "oracle_draws"));
  if (root["pattern_min"]) s.pattern_min = r.integer(root["pattern_min"], "pattern_min");
  if (root["estimators"]) {
    s.estimators.clear();
    const toml::array* arr = root["estimators"].as_array();
    if (!arr) r.fail("estimators", "must be an array of strings");
    for (const auto& el : *arr) {
      auto v = el.value<std::string>();
      if (!v) r.fail("estimators", "must be an array of strings");
      s.estimators.push_back(parse_estimator(*v));
    }
  }

  if (auto weeks = root["schedule"]["weeks"]) {
    const VisitSchedule schedule(r.numbers(weeks, "schedule.weeks"));
    if (!(schedule == s.schedule)) {
      s.schedule = schedule;
      s.dropout.steps.clear();
    }
  }
  const Index p = s.schedule.size();

  if (auto out = root["outcomes"]) {
    if (out["active_mean"]) s.active.mean = r.vector(out["active_mean"], "outcomes.active_mean", p);
    if (out["reference_mean"]) s.reference.mean = r.vector(out["reference_mean"], "outcomes.reference_mean", p);
    if (out["variances"]) {
      const Eigen::VectorXd var = r.vector(out["variances"], "outcomes.variances", p);
      if ((var.array() <= 0.0).any()) r.fail("outcomes.variances", "must be positive");
      const double rho = out["rho"] ? r.number(out["rho"], "outcomes.rho") : 0.8;
      const double scale = out["rho_scale_weeks"] ? r.number(out["rho_scale_weeks"], "outcomes.rho_scale_weeks") : 4.0;
      s.active.cov = s.reference.cov = spatial_power_cov(var.cwiseSqrt(), s.schedule, rho, scale);
    }
    if (out["covariance"]) s.active.cov = s.reference.cov = r.matrix(out["covariance"], "outcomes.covariance", p);
    if (out["active_covariance"])
      s.active.cov = r.matrix(out["active_covariance"], "outcomes.active_covariance", p);
    if (out["reference_covariance"])
      s.reference.cov = r.matrix(out["reference_covariance"], "outcomes.reference_covariance", p);
  }

  if (auto d = root["dropout"]) {
    if (d["intercept"]) {
      const double b0 = r.number(d["intercept"], "dropout.intercept");
      for (auto& step : s.dropout.steps) step.intercept = b0;
    }
    if (auto steps = d["step"]) {
      const toml::array* arr = steps.as_array();
      if (!arr) r.fail("dropout.step", "must be an array of tables");
      s.dropout.steps.clear();
      for (const auto& el : *arr) {
        const toml::node_view<const toml::node> t{el};
        DropoutStep step;
        step.visit = r.integer(t["visit"], "dropout.step.visit");
        step.intercept = r.number(t["intercept"], "dropout.step.intercept");
        std::tie(step.beta_base[0], step.beta_base[1]) = arm_pair(r, t["beta_base"], "dropout.step.beta_base");
        std::tie(step.beta_prev[0], step.beta_prev[1]) = arm_pair(r, t["beta_prev"], "dropout.step.beta_prev");
        s.dropout.steps.push_back(step);
      }
    }
  }

  if (auto g = root["gibbs"]) {
    if (g["iterations"]) s.gibbs.n_total = static_cast<int>(r.integer(g["iterations"], "gibbs.iterations"));
    if (g["burn_in"]) s.gibbs.n_burn = static_cast<int>(r.integer(g["burn_in"], "gibbs.burn_in"));
    if (g["thin"]) s.gibbs.thin = static_cast<int>(r.integer(g["thin"], "gibbs.thin"));
    if (g["iw_df_offset"]) s.gibbs.iw_df_offset = r.number(g["iw_df_offset"], "gibbs.iw_df_offset");
    if (g["covariance"]) s.gibbs.structure = parse_covariance_structure(r.string(g["covariance"], "gibbs.covariance"));
    if (g["baseline"]) s.gibbs.baseline = parse_baseline_mean(r.string(g["baseline"], "gibbs.baseline"));
  }

  try {
    s.validate();
  } catch (const InvalidParameter& e) {
    throw ValidationError(std::string(source) + ": " + e.what());
  }
  return s;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open scenario file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path.string());
}

namespace {

toml::array to_array(const Eigen::VectorXd& v) {
  toml::array a;
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

toml::array to_array(const Eigen::MatrixXd& m) {
  toml::array a;
  for (Index i = 0; i < m.rows(); ++i) a.push_back(to_array(Eigen::VectorXd(m.row(i).transpose())));
  return a;
}

}  // namespace

std::string scenario_to_toml(const ScenarioConfig& s) {
  toml::table doc;
  doc.insert("name", s.name);
  doc.insert("hypothesis", std::string(to_string(s.hypothesis)));
  doc.insert("ice_level", std::string(to_string(s.ice_level)));
  doc.insert("n_per_arm", s.n_per_arm);
  doc.insert("replications", s.replications);
  doc.insert("seed", static_cast<std::int64_t>(s.seed));
  doc.insert("imputations", s.imputations);
  doc.insert("oracle_draws", static_cast<std::int64_t>(s.oracle_draws));
  doc.insert("pattern_min", static_cast<std::int64_t>(s.pattern_min));
  toml::array est;
  for (const auto& e : s.estimators) est.push_back(e.label());
  doc.insert("estimators", est);

  toml::array weeks;
  for (double w : s.schedule.times()) weeks.push_back(w);
  doc.insert("schedule", toml::table{{"weeks", weeks}});

  doc.insert("outcomes", toml::table{{"active_mean", to_array(s.active.mean)},
                                     {"reference_mean", to_array(s.reference.mean)},
                                     {"active_covariance", to_array(s.active.cov)},
                                     {"reference_covariance", to_array(s.reference.cov)}});

  toml::array steps;
  for (const auto& st : s.dropout.steps)
    steps.push_back(toml::table{{"visit", static_cast<std::int64_t>(st.visit)},
                                {"intercept", st.intercept},
                                {"beta_base", toml::array{st.beta_base[0], st.beta_base[1]}},
                                {"beta_prev", toml::array{st.beta_prev[0], st.beta_prev[1]}}});
  doc.insert("dropout", toml::table{{"step", steps}});

  doc.insert("gibbs", toml::table{{"iterations", s.gibbs.n_total},
                                  {"burn_in", s.gibbs.n_burn},
                                  {"thin", s.gibbs.thin},
                                  {"iw_df_offset", s.gibbs.iw_df_offset},
                                  {"covariance", std::string(to_string(s.gibbs.structure))},
                                  {"baseline", std::string(to_string(s.gibbs.baseline))}});
  std::ostringstream out;
  out << doc << '\n';
  return out.str();
}

}  // namespace refbcm
