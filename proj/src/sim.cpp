#include "refbcm/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>

#include "refbcm/text.hpp"

namespace refbcm {

std::string_view to_string(Hypothesis h) { return h == Hypothesis::null ? "null" : "alternative"; }
std::string_view to_string(IceLevel l) { return l == IceLevel::low ? "low" : "high"; }

Hypothesis parse_hypothesis(std::string_view text) {
  if (text == "null") return Hypothesis::null;
  if (text == "alternative" || text == "alt") return Hypothesis::alternative;
  throw ParseError("unknown hypothesis '" + std::string(text) + "' (expected null or alternative)");
}

IceLevel parse_ice_level(std::string_view text) {
  if (text == "low") return IceLevel::low;
  if (text == "high") return IceLevel::high;
  throw ParseError("unknown ICE level '" + std::string(text) + "' (expected low or high)");
}

// ---------------------------------------------------------------------------
// Dropout

void DropoutModel::validate(Index visits) const {
  Index previous = 1;
  for (const auto& s : steps) {
    if (s.visit < 2 || s.visit >= visits)
      throw InvalidParameter("dropout visits must lie in 2.." + std::to_string(visits - 1));
    if (s.visit <= previous)
      throw InvalidParameter("dropout visits must be strictly increasing");
    previous = s.visit;
    for (double v : {s.intercept, s.beta_base[0], s.beta_base[1], s.beta_prev[0], s.beta_prev[1]})
      if (!std::isfinite(v)) throw InvalidParameter("dropout coefficients must be finite");
  }
}

double DropoutModel::hazard(const DropoutStep& step, Arm arm, double baseline, double previous) const {
  const int a = static_cast<int>(arm);
  const double eta = step.intercept + step.beta_base[a] * baseline + step.beta_prev[a] * previous;
  return 1.0 / (1.0 + std::exp(-eta));
}

DropoutModel DropoutModel::builtin(double intercept) {
  // Weeks 8, 14, 20, 26; {reference, active}.
  constexpr double base[] = {0.3, 0.1, 0.05, 0.0};
  constexpr double prev_reference[] = {1.14, 1.33, 1.51, 1.46};
  constexpr double prev_active[] = {1.14, 1.47, 1.48, 1.40};
  DropoutModel m;
  for (int i = 0; i < 4; ++i) {
    DropoutStep s;
    s.visit = i + 2;
    s.intercept = intercept;
    s.beta_base[0] = s.beta_base[1] = base[i];
    s.beta_prev[0] = prev_reference[i];
    s.beta_prev[1] = prev_active[i];
    m.steps.push_back(s);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Estimator suite

std::string EstimatorSpec::label() const {
  switch (family) {
    case Family::rubin:
      return "rubin:" + std::string(to_string(method));
    case Family::condmean:
      return "condmean:" + std::string(to_string(method));
    case Family::bcm:
      break;
  }
  return "bcm:" + prior.to_string();
}

EstimatorSpec parse_estimator(std::string_view text) {
  const std::size_t colon = text.find(':');
  const std::string_view family = text.substr(0, colon);
  const std::string_view rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  EstimatorSpec spec;
  if (family == "rubin" || family == "condmean") {
    spec.family = family == "rubin" ? EstimatorSpec::Family::rubin : EstimatorSpec::Family::condmean;
    spec.method = parse_rbi_method(rest);
    return spec;
  }
  if (family == "bcm") {
    spec.family = EstimatorSpec::Family::bcm;
    spec.prior = parse_k0_prior(rest);
    return spec;
  }
  throw ParseError("unknown estimator '" + std::string(text) +
                   "' (expected rubin:<j2r|cir>, condmean:<j2r|cir> or bcm:<prior>)");
}

std::vector<EstimatorSpec> default_estimators() {
  std::vector<EstimatorSpec> out;
  for (const char* label : {"rubin:j2r", "rubin:cir", "condmean:j2r", "condmean:cir", "bcm:point:0", "bcm:point:1",
                            "bcm:normal:0,0.1", "bcm:normal:0,0.5", "bcm:normal:1,0.1", "bcm:normal:1,0.5"})
    out.push_back(parse_estimator(label));
  return out;
}

// ---------------------------------------------------------------------------
// Scenario

void ScenarioConfig::validate() const {
  const Index p = schedule.size();
  if (p < 2) throw InvalidParameter("scenario needs a visit schedule");
  for (const auto* law : {&active, &reference}) {
    if (law->mean.size() != p || law->cov.rows() != p || law->cov.cols() != p)
      throw InvalidParameter("scenario outcome law does not match the schedule length");
    if (!law->mean.allFinite()) throw InvalidParameter("scenario means must be finite");
    if (!is_positive_definite(law->cov)) throw InvalidParameter("scenario covariance must be symmetric positive definite");
  }
  dropout.validate(p);
  if (n_per_arm < 5) throw InvalidParameter("n_per_arm must be at least 5");
  if (replications < 1) throw InvalidParameter("replications must be positive");
  if (imputations < 2) throw InvalidParameter("imputations must be at least 2");
  if (oracle_draws < 1000) throw InvalidParameter("oracle_draws must be at least 1000");
  if (pattern_min < 0 || pattern_min > p - 1) throw InvalidParameter("pattern_min out of range");
  gibbs.validate();
  if (imputations > gibbs.kept()) throw InvalidParameter("more imputations than kept posterior draws");
  if (estimators.empty()) throw InvalidParameter("estimator suite is empty");
  for (const auto& e : estimators)
    if (e.family == EstimatorSpec::Family::bcm) e.prior.validate();
}

ScenarioConfig ScenarioConfig::builtin(Hypothesis hypothesis, IceLevel level) {
  ScenarioConfig s;
  s.hypothesis = hypothesis;
  s.ice_level = level;
  s.name = std::string(level == IceLevel::high ? "high" : "low") + (hypothesis == Hypothesis::null ? "_null" : "_alt");
  s.schedule = VisitSchedule{0, 4, 8, 14, 20, 26};
  Eigen::VectorXd variances(6);
  variances << 0.48, 0.8, 1.1, 1.4, 1.23, 1.48;
  const Eigen::MatrixXd cov = spatial_power_cov(variances.cwiseSqrt(), s.schedule, 0.8, 4.0);
  s.active.mean.resize(6);
  s.active.mean << 7.92, 7.55, 7.20, 7.10, 7.05, 7.05;
  s.reference.mean.resize(6);
  s.reference.mean << 7.92, 7.82, 7.80, 7.80, 7.78, 7.78;
  s.active.cov = cov;
  s.reference.cov = cov;
  s.dropout = DropoutModel::builtin(level == IceLevel::high ? -13.0 : -15.0);
  s.estimators = default_estimators();
  return s;
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

// Applies the sequential dropout model in place; returns D.
int apply_dropout(const DropoutModel& model, Arm arm, Eigen::Ref<Eigen::VectorXd> y, Rng& rng) {
  for (const auto& step : model.steps) {
    const double h = model.hazard(step, arm, y(0), y(step.visit - 1));
    if (rng.uniform() < h) {
      y.tail(y.size() - step.visit).setConstant(std::numeric_limits<double>::quiet_NaN());
      return static_cast<int>(step.visit - 1);
    }
  }
  return static_cast<int>(y.size() - 1);
}

std::string patient_id(Arm arm, int i) {
  std::string n = std::to_string(i + 1);
  return std::string(arm == Arm::active ? "a" : "r") + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

}  // namespace

TrialDataset simulate_trial(const ScenarioConfig& scenario, Rng& rng) {
  std::vector<PatientRecord> patients;
  patients.reserve(2 * static_cast<std::size_t>(scenario.n_per_arm));
  for (Arm arm : kArms) {
    const auto& law = scenario.law(arm);
    Eigen::MatrixXd y = sample_mvn(law, rng, scenario.n_per_arm);
    for (int i = 0; i < scenario.n_per_arm; ++i) {
      PatientRecord rec;
      rec.id = patient_id(arm, i);
      rec.arm = arm;
      rec.outcomes = y.row(i).transpose();
      rec.last_observed = apply_dropout(scenario.dropout, arm, rec.outcomes, rng);
      patients.push_back(std::move(rec));
    }
  }
  return TrialDataset(scenario.schedule, std::move(patients));
}

double TrueEffect::mcse(double k0) const {
  if (n_mc <= 0) return 0.0;
  const double v = var_a + 2.0 * k0 * cov_ab + k0 * k0 * var_b;
  return std::sqrt(std::max(v, 0.0) / static_cast<double>(n_mc));
}

TrueEffect true_effect_oracle(const ScenarioConfig& scenario, long n_mc, Rng& rng) {
  if (n_mc < 1) throw InvalidParameter("oracle needs at least one simulated patient");
  const auto& active = scenario.law(Arm::active);
  const Index p = scenario.schedule.size();
  const Eigen::VectorXd delta = active.mean - scenario.law(Arm::reference).mean;
  const CheckedCholesky<double> chol(active.cov);
  chol.require("oracle covariance");
  const Eigen::MatrixXd l = chol.matrixL();

  Eigen::VectorXd counts = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd z(p), y(p);
  for (long i = 0; i < n_mc; ++i) {
    for (Index t = 0; t < p; ++t) z(t) = rng.normal();
    y = active.mean + l * z;
    counts(apply_dropout(scenario.dropout, Arm::active, y, rng)) += 1.0;
  }

  TrueEffect out;
  out.n_mc = n_mc;
  out.pi = counts / static_cast<double>(n_mc);
  if (scenario.hypothesis == Hypothesis::null) return out;  // exactly zero effect

  const Index jmax = p - 1;
  out.a = out.pi(jmax) * delta(jmax);
  out.b = out.pi.head(jmax).dot(delta.head(jmax));
  // Per-patient contributions a_i = 1{D=jmax} delta_jmax, b_i = 1{D<jmax} delta_D.
  double eb2 = 0.0;
  for (Index j = 0; j < jmax; ++j) eb2 += out.pi(j) * delta(j) * delta(j);
  out.var_a = out.pi(jmax) * delta(jmax) * delta(jmax) - out.a * out.a;
  out.var_b = eb2 - out.b * out.b;
  out.cov_ab = -out.a * out.b;
  return out;
}

// ---------------------------------------------------------------------------
// Replications

Rng replication_rng(std::uint64_t master_seed, int index) {
  return Rng(master_seed, static_cast<std::uint64_t>(index) + 1);
}

Rng oracle_rng(std::uint64_t master_seed) { return Rng(master_seed, 0).split(0x6f7261636c65ULL); }

namespace {

enum StreamTag : std::uint64_t { kData = 1, kGibbs = 2, kPi = 3, kK0 = 4, kTruth = 5, kRubin = 10 };

EstimateRow interval_row(std::string label, double point, double se) {
  return {std::move(label), point, se, point - kZ975 * se, point + kZ975 * se, 0.0, 0.0};
}

}  // namespace

TrialDataset replication_data(const ScenarioConfig& scenario, int index) {
  Rng data_rng = replication_rng(scenario.seed, index).split(kData);
  return simulate_trial(scenario, data_rng);
}

ReplicationResult run_replication(const ScenarioConfig& scenario, const TrueEffect& truth, int index) {
  const Rng rep = replication_rng(scenario.seed, index);
  ReplicationResult out;
  out.index = index;
  out.seed = scenario.seed;

  const TrialDataset data = replication_data(scenario, index);

  bool needs_posterior = false;
  std::vector<RbiMethod> condmean_methods;
  for (const auto& e : scenario.estimators) {
    if (e.family == EstimatorSpec::Family::condmean) {
      if (std::find(condmean_methods.begin(), condmean_methods.end(), e.method) == condmean_methods.end())
        condmean_methods.push_back(e.method);
    } else {
      needs_posterior = true;
    }
  }

  PosteriorDraws posterior;
  Eigen::VectorXd bcm_a, bcm_b;
  if (needs_posterior) {
    GibbsConfig g = scenario.gibbs;
    g.seed = rep.derive_seed(kGibbs);
    posterior = gibbs_sample(data, g);
  }

  std::vector<JackknifeEstimate> condmean;
  if (!condmean_methods.empty()) condmean = jackknife_se(data, condmean_methods, scenario.gibbs.structure, scenario.gibbs.baseline);

  for (const auto& e : scenario.estimators) {
    EstimateRow row;
    switch (e.family) {
      case EstimatorSpec::Family::rubin: {
        Rng r = rep.split(kRubin + static_cast<std::uint64_t>(e.method));
        const PooledEstimate est = rubin_analysis(data, posterior, e.method, scenario.imputations, r);
        row = {e.label(), est.point, est.se, est.ci_low, est.ci_high, 0.0, 0.0};
        row.k0_true = e.assumed_k0();
        break;
      }
      case EstimatorSpec::Family::condmean: {
        const auto pos = std::find(condmean_methods.begin(), condmean_methods.end(), e.method) - condmean_methods.begin();
        const JackknifeEstimate& jk = condmean[static_cast<std::size_t>(pos)];
        row = interval_row(e.label(), jk.point, jk.se);
        row.k0_true = e.assumed_k0();
        break;
      }
      case EstimatorSpec::Family::bcm: {
        const Index draws = static_cast<Index>(posterior.size());
        if (bcm_a.size() == 0) {
          // The decomposition does not depend on the prior; compute it once.
          Rng pi_rng = rep.split(kPi);
          const Eigen::MatrixXd pi = draw_pi(pattern_counts(data, Arm::active), draws, pi_rng, scenario.pattern_min);
          const EffectDraws base =
              effect_draws(posterior, pi, Eigen::VectorXd::Zero(draws), MaintainedEffectModel::constant());
          bcm_a = base.a;
          bcm_b = base.b;
        }
        Rng k_rng = rep.split(kK0);
        const Eigen::VectorXd k = draw_k0(e.prior, draws, k_rng);
        const Eigen::VectorXd theta = bcm_a + k.cwiseProduct(bcm_b);
        const EstimateSummary s = summarize(theta, e.prior.default_interval());
        row = {e.label(), s.point, s.sd, s.ci_low, s.ci_high, 0.0, 0.0};
        Rng truth_rng = rep.split(kTruth);
        row.k0_true = draw_k0(e.prior, 1, truth_rng)(0);
        break;
      }
    }
    row.theta_true = truth.effect(row.k0_true);
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

const EstimatorMetrics& MetricsReport::at(std::string_view estimator) const {
  for (const auto& m : estimators)
    if (m.estimator == estimator) return m;
  throw InvalidParameter("no metrics for estimator '" + std::string(estimator) + "'");
}

MetricsReport compute_metrics(const std::vector<ReplicationResult>& results, std::string scenario) {
  if (results.empty()) throw InvalidParameter("metrics need at least one replication");
  MetricsReport report;
  report.scenario = std::move(scenario);
  const std::size_t n_est = results.front().rows.size();
  const double r = static_cast<double>(results.size());
  for (std::size_t e = 0; e < n_est; ++e) {
    EstimatorMetrics m;
    m.estimator = results.front().rows[e].estimator;
    m.replications = static_cast<int>(results.size());
    double sum_sq = 0.0, true_sq = 0.0;
    int covered = 0, rejected = 0;
    for (const auto& rep : results) {
      if (rep.rows.size() != n_est || rep.rows[e].estimator != m.estimator)
        throw InvalidParameter("replications disagree on the estimator suite");
      const EstimateRow& row = rep.rows[e];
      m.mean += row.point;
      m.true_mean += row.theta_true;
      m.est_se += row.se;
      if (row.ci_low <= row.theta_true && row.theta_true <= row.ci_high) ++covered;
      if (row.ci_low > 0.0 || row.ci_high < 0.0) ++rejected;
    }
    m.mean /= r;
    m.true_mean /= r;
    m.est_se /= r;
    for (const auto& rep : results) {
      sum_sq += (rep.rows[e].point - m.mean) * (rep.rows[e].point - m.mean);
      true_sq += (rep.rows[e].theta_true - m.true_mean) * (rep.rows[e].theta_true - m.true_mean);
    }
    // A single replication has no spread to estimate.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    m.emp_se = r > 1.0 ? std::sqrt(sum_sq / (r - 1.0)) : nan;
    m.true_sd = r > 1.0 ? std::sqrt(true_sq / (r - 1.0)) : nan;
    m.bias = m.mean - m.true_mean;
    const double cov_p = covered / r;
    m.coverage = 100.0 * cov_p;
    m.rejection = 100.0 * rejected / r;
    m.mcse_mean = m.emp_se / std::sqrt(r);
    m.mcse_coverage = 100.0 * std::sqrt(cov_p * (1.0 - cov_p) / r);
    report.estimators.push_back(std::move(m));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Study

StudyResult run_study(const ScenarioConfig& scenario, unsigned threads) {
  scenario.validate();
  StudyResult out;
  Rng o_rng = oracle_rng(scenario.seed);
  out.truth = true_effect_oracle(scenario, scenario.oracle_draws, o_rng);

  const int total = scenario.replications;
  out.replications.resize(static_cast<std::size_t>(total));
  std::atomic<int> next{0};
  std::atomic<bool> stop{false};
  std::mutex failure_mutex;
  int failed_index = total;
  std::string failure;

  auto worker = [&] {
    for (;;) {
      if (stop.load()) return;
      const int i = next.fetch_add(1);
      if (i >= total) return;
      try {
        out.replications[static_cast<std::size_t>(i)] = run_replication(scenario, out.truth, i);
      } catch (const std::exception& e) {
        std::lock_guard lock(failure_mutex);
        if (i < failed_index) {
          failed_index = i;
          failure = e.what();
        }
        stop.store(true);
      }
    }
  };

  threads = std::max(1u, std::min(threads, static_cast<unsigned>(total)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failed_index < total)
    throw EstimationError("replication " + std::to_string(failed_index) + " failed (replay with --seed " +
                          std::to_string(scenario.seed) + " --replay-index " + std::to_string(failed_index) +
                          "): " + failure);

  out.metrics = compute_metrics(out.replications, scenario.name);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

void write_replications_csv(std::ostream& out, const std::vector<ReplicationResult>& results) {
  out << "replication,seed,estimator,point,se,ci_low,ci_high,k0_true,theta_true\n";
  for (const auto& rep : results)
    for (const auto& row : rep.rows)
      out << rep.index << ',' << rep.seed << ',' << csv_field(row.estimator) << ',' << to_text(row.point) << ','
          << to_text(row.se) << ',' << to_text(row.ci_low) << ',' << to_text(row.ci_high) << ','
          << to_text(row.k0_true) << ',' << to_text(row.theta_true) << '\n';
}

void write_summary_csv(std::ostream& out, const MetricsReport& report) {
  out << "scenario,estimator,replications,mean,true_mean,true_sd,bias,emp_se,est_se,coverage,rejection,mcse_mean,"
         "mcse_coverage\n";
  for (const auto& m : report.estimators)
    out << csv_field(report.scenario) << ',' << csv_field(m.estimator) << ',' << m.replications << ',' << to_text(m.mean) << ','
        << to_text(m.true_mean) << ',' << to_text(m.true_sd) << ',' << to_text(m.bias) << ',' << to_text(m.emp_se)
        << ',' << to_text(m.est_se) << ',' << to_text(m.coverage) << ',' << to_text(m.rejection) << ','
        << to_text(m.mcse_mean) << ',' << to_text(m.mcse_coverage) << '\n';
}

std::vector<EstimateRow> read_replication_rows(std::istream& in, int index) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("replication,", 0) != 0)
    throw ParseError("replication CSV: missing header");
  std::vector<EstimateRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_view(line, ',');
    // Quoted prior labels may contain commas, so fields are read from both ends.
    if (cells.size() < 9) throw ParseError("replication CSV line " + std::to_string(line_no) + ": too few fields");
    double idx = 0.0;
    if (!parse_double(cells[0], idx)) throw ParseError("replication CSV line " + std::to_string(line_no));
    if (static_cast<int>(idx) != index) continue;
    const std::size_t n = cells.size();
    EstimateRow row;
    std::string label;
    for (std::size_t c = 2; c + 6 < n; ++c) {
      if (c > 2) label += ',';
      label += cells[c];
    }
    if (label.size() >= 2 && label.front() == '"' && label.back() == '"') label = label.substr(1, label.size() - 2);
    row.estimator = label;
    double* fields[] = {&row.point, &row.se, &row.ci_low, &row.ci_high, &row.k0_true, &row.theta_true};
    for (std::size_t f = 0; f < 6; ++f)
      if (!parse_double(cells[n - 6 + f], *fields[f]))
        throw ParseError("replication CSV line " + std::to_string(line_no) + ": bad number");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace refbcm
