// refbcm: reference-based imputation and Bayesian causal model estimates for
// longitudinal trials, plus the simulation study harness.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <toml.hpp>

#include "refbcm/bcm.hpp"
#include "refbcm/error.hpp"
#include "refbcm/mmrm.hpp"
#include "refbcm/rbi.hpp"
#include "refbcm/report.hpp"
#include "refbcm/scenario_io.hpp"
#include "refbcm/sim.hpp"
#include "refbcm/text.hpp"

#ifndef REFBCM_VERSION
#define REFBCM_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace refbcm;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

constexpr const char* kPriorHelp =
    "Prior on k0 (repeatable): point:v | normal:mean,sd | triangular:mode,max | triangular:min,mode,max | "
    "truncnorm:mean,sd[,lower]. Triangular with two values takes min 0; truncnorm lower defaults to 0.";

struct Options {
  std::vector<std::string> argv;
  std::string data;
  std::string schedule;
  std::string scenario;
  std::string hypothesis = "alternative";
  std::string ice = "high";
  std::vector<std::string> methods;
  std::vector<std::string> priors;
  std::string model = "constant";
  std::string interval = "auto";
  std::string cov = "shared";
  std::string baseline = "common";
  std::string format = "table";
  std::string out_dir;
  std::uint64_t seed = 20240101;
  int draws = 10000;
  int burn_in = 200;
  int thin = 1;
  int imputations = 100;
  int pattern_min = -1;
  double iw_df_offset = 2.0;

  // study
  std::optional<int> reps;
  std::optional<int> n_per_arm;
  std::optional<int> replay_index;
  std::string check;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());

  // sweep
  double prior_mean = 0.0;
  std::string sigmas = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1,1.1,1.2,1.3,1.4,1.5";

  // oracle / trajectories / simulate
  std::string k_values = "0,0.5,1";
  long n_mc = 1'000'000;
  int pattern = 2;
  int index = 0;
  std::string output;

  bool seed_set = false;
  bool imputations_set = false;
  bool draws_set = false;
};

std::vector<double> parse_list(const std::string& text, std::string_view what) {
  std::vector<double> out;
  for (auto token : split_view(text, ',')) {
    double v = 0.0;
    if (!parse_double(token, v)) throw ParseError("malformed " + std::string(what) + " list '" + text + "'");
    out.push_back(v);
  }
  return out;
}

// Visit times from --schedule, or 0..j_max taken from the CSV header.
VisitSchedule resolve_schedule(const Options& o) {
  if (!o.schedule.empty()) return VisitSchedule(parse_list(o.schedule, "schedule"));
  std::ifstream in(o.data);
  std::string header;
  if (!in || !std::getline(in, header)) throw ValidationError("cannot read " + o.data);
  const auto cols = split_view(header, ',');
  if (cols.size() < 4) throw ValidationError(o.data + ": header needs id,arm and at least two outcome columns");
  std::vector<double> times;
  for (std::size_t j = 0; j + 2 < cols.size(); ++j) times.push_back(static_cast<double>(j));
  return VisitSchedule(std::move(times));
}

// Malformed input files are data errors, not usage errors.
TrialDataset load_data(const Options& o, const VisitSchedule& schedule) {
  try {
    return load_csv(o.data, schedule);
  } catch (const ParseError& e) {
    throw ValidationError(e.what());
  }
}

GibbsConfig gibbs_config(const Options& o, std::uint64_t seed) {
  GibbsConfig g;
  g.n_burn = o.burn_in;
  g.thin = o.thin;
  g.n_total = o.burn_in + o.draws * o.thin;
  g.seed = seed;
  g.iw_df_offset = o.iw_df_offset;
  g.structure = parse_covariance_structure(o.cov);
  g.baseline = parse_baseline_mean(o.baseline);
  g.validate();
  return g;
}

MaintainedEffectModel effect_model(const Options& o, const VisitSchedule& schedule) {
  if (o.model == "constant") return MaintainedEffectModel::constant();
  if (o.model == "decay") return MaintainedEffectModel::decay(schedule);
  throw ParseError("unknown model '" + o.model + "' (expected constant or decay)");
}

std::optional<IntervalKind> interval_kind(const Options& o) {
  if (o.interval == "auto") return std::nullopt;
  if (o.interval == "normal") return IntervalKind::normal_approx;
  if (o.interval == "percentile") return IntervalKind::percentile;
  throw ParseError("unknown interval '" + o.interval + "' (expected auto, normal or percentile)");
}

ScenarioConfig load_scenario_file(const std::string& path) {
  try {
    return load_scenario(path);
  } catch (const ParseError& e) {
    throw ValidationError(e.what());
  }
}

ScenarioConfig resolve_scenario(const Options& o) {
  ScenarioConfig s = o.scenario.empty()
                         ? ScenarioConfig::builtin(parse_hypothesis(o.hypothesis), parse_ice_level(o.ice))
                         : load_scenario_file(o.scenario);
  if (o.seed_set) s.seed = o.seed;
  if (o.reps) s.replications = *o.reps;
  if (o.n_per_arm) s.n_per_arm = *o.n_per_arm;
  if (o.imputations_set) s.imputations = o.imputations;
  if (o.draws_set) s.gibbs.n_total = s.gibbs.n_burn + o.draws * s.gibbs.thin;
  s.validate();
  return s;
}

struct Outputs {
  fs::path dir;
  RunManifest manifest;

  Outputs(const Options& o, std::string command) {
    manifest.command = std::move(command);
    manifest.argv = o.argv;
    manifest.version = REFBCM_VERSION;
    manifest.started = utc_timestamp();
    if (!o.out_dir.empty()) {
      dir = o.out_dir;
      fs::create_directories(dir);
    }
  }

  bool enabled() const { return !dir.empty(); }

  template <typename Writer>
  void file(const std::string& name, Writer&& write) {
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    write(out);
    manifest.outputs.push_back(path.string());
  }

  void finish() {
    if (!enabled()) return;
    manifest.finished = utc_timestamp();
    manifest.outputs.push_back((dir / "manifest.toml").string());
    manifest.write(dir / "manifest.toml");
  }
};

std::string table_to_string(const toml::table& t) {
  std::ostringstream out;
  out << t << '\n';
  return out.str();
}

void print_records(const Options& o, const std::vector<ResultRecord>& records) {
  if (o.format == "csv") write_records_csv(std::cout, records);
  else if (o.format == "json") write_records_json(std::cout, records);
  else if (o.format == "table") write_records_table(std::cout, records);
  else throw ParseError("unknown format '" + o.format + "' (expected table, csv or json)");
}

// ---------------------------------------------------------------------------

int cmd_analyze(const Options& o) {
  const VisitSchedule schedule = resolve_schedule(o);
  const TrialDataset data = load_data(o, schedule);
  const std::vector<std::string> methods = o.methods.empty() ? std::vector<std::string>{"bcm"} : o.methods;
  const std::vector<std::string> priors = o.priors.empty() ? std::vector<std::string>{"point:0"} : o.priors;
  std::vector<K0Prior> parsed_priors;
  for (const auto& p : priors) parsed_priors.push_back(parse_k0_prior(p));
  const MaintainedEffectModel model = effect_model(o, schedule);
  const auto interval = interval_kind(o);
  for (const auto& m : methods)
    if (m != "bcm") parse_estimator(m);

  Outputs outputs(o, "analyze");
  outputs.manifest.seed = o.seed;
  const Rng master(o.seed, 0);
  const GibbsConfig gibbs = gibbs_config(o, master.derive_seed(2));

  std::optional<PosteriorDraws> posterior;
  auto need_posterior = [&]() -> const PosteriorDraws& {
    if (!posterior) posterior = gibbs_sample(data, gibbs);
    return *posterior;
  };

  std::vector<ResultRecord> records;
  for (const auto& m : methods) {
    if (m == "bcm") {
      for (std::size_t i = 0; i < parsed_priors.size(); ++i) {
        BcmOptions opts{parsed_priors[i], model, interval, o.pattern_min};
        Rng pi_rng = master.split(3);
        Rng k_rng = master.split(4);
        const EstimateSummary s = bcm_estimate(data, need_posterior(), opts, pi_rng, k_rng);
        records.push_back(make_record("bcm:" + parsed_priors[i].to_string(), s));
      }
      continue;
    }
    const EstimatorSpec spec = parse_estimator(m);
    if (spec.family == EstimatorSpec::Family::rubin) {
      Rng r = master.split(10 + static_cast<std::uint64_t>(spec.method));
      records.push_back(
          make_record(spec.label(), rubin_analysis(data, need_posterior(), spec.method, o.imputations, r)));
    } else {
      records.push_back(make_record(spec.label(), jackknife_se(data, spec.method, gibbs.structure, gibbs.baseline),
                                    static_cast<long>(data.size())));
    }
  }
  print_records(o, records);

  if (outputs.enabled()) {
    toml::table cfg{{"data", o.data},
                    {"seed", static_cast<std::int64_t>(o.seed)},
                    {"draws", o.draws},
                    {"burn_in", o.burn_in},
                    {"thin", o.thin},
                    {"imputations", o.imputations},
                    {"iw_df_offset", o.iw_df_offset},
                    {"covariance", o.cov},
                    {"baseline", o.baseline},
                    {"model", o.model},
                    {"interval", o.interval},
                    {"pattern_min", o.pattern_min}};
    toml::array w, ms, ps;
    for (double t : schedule.times()) w.push_back(t);
    for (const auto& m : methods) ms.push_back(m);
    for (const auto& p : priors) ps.push_back(p);
    cfg.insert("schedule", w);
    cfg.insert("methods", ms);
    cfg.insert("priors", ps);
    outputs.manifest.config_toml = table_to_string(toml::table{{"analyze", cfg}});
    outputs.file("results.csv", [&](std::ostream& out) { write_records_csv(out, records); });
    outputs.file("results.json", [&](std::ostream& out) { write_records_json(out, records); });
  }
  outputs.finish();
  return kOk;
}

int cmd_sweep(const Options& o) {
  const std::vector<double> sigmas = parse_list(o.sigmas, "sigma");
  if (sigmas.empty()) throw ParseError("sigma grid is empty");
  for (double s : sigmas)
    if (!(s >= 0.0)) throw ParseError("sigma values must be non-negative");
  const VisitSchedule schedule = resolve_schedule(o);
  const TrialDataset data = load_data(o, schedule);
  Outputs outputs(o, "sweep");
  outputs.manifest.seed = o.seed;
  const Rng master(o.seed, 0);
  const PosteriorDraws posterior = gibbs_sample(data, gibbs_config(o, master.derive_seed(2)));
  const MaintainedEffectModel model = effect_model(o, schedule);

  std::ostringstream csv;
  csv << "sigma_k0,point,sd,ci_low,ci_high\n";
  for (double s : sigmas) {
    // Same pattern and k streams for every sigma.
    Rng pi_rng = master.split(3);
    Rng k_rng = master.split(4);
    const K0Prior prior = s == 0.0 ? K0Prior::point(o.prior_mean) : K0Prior::normal(o.prior_mean, s);
    BcmOptions opts{prior, model, IntervalKind::normal_approx, o.pattern_min};
    const EstimateSummary e = bcm_estimate(data, posterior, opts, pi_rng, k_rng);
    csv << to_text(s) << ',' << to_text(e.point) << ',' << to_text(e.sd) << ',' << to_text(e.ci_low) << ','
        << to_text(e.ci_high) << '\n';
  }
  std::cout << csv.str();
  if (outputs.enabled()) {
    toml::array w;
    for (double t : schedule.times()) w.push_back(t);
    outputs.manifest.config_toml = table_to_string(toml::table{{"sweep",
                                                                toml::table{{"data", o.data},
                                                                            {"schedule", w},
                                                                            {"seed", static_cast<std::int64_t>(o.seed)},
                                                                            {"prior_mean", o.prior_mean},
                                                                            {"sigmas", o.sigmas},
                                                                            {"draws", o.draws},
                                                                            {"burn_in", o.burn_in},
                                                                            {"covariance", o.cov},
                                                                            {"baseline", o.baseline},
                                                                            {"model", o.model}}}});
    outputs.file("sweep.csv", [&](std::ostream& out) { out << csv.str(); });
  }
  outputs.finish();
  return kOk;
}

int cmd_study(const Options& o) {
  const ScenarioConfig s = resolve_scenario(o);

  if (o.replay_index) {
    const int i = *o.replay_index;
    if (i < 0) throw ParseError("--replay-index must be non-negative");
    Rng o_rng = oracle_rng(s.seed);
    const TrueEffect truth = true_effect_oracle(s, s.oracle_draws, o_rng);
    const ReplicationResult rep = run_replication(s, truth, i);
    write_replications_csv(std::cout, {rep});
    if (o.check.empty()) return kOk;

    std::ifstream in(o.check);
    if (!in) throw ValidationError("cannot open " + o.check);
    const auto stored = read_replication_rows(in, i);
    bool same = stored.size() == rep.rows.size();
    for (std::size_t k = 0; same && k < stored.size(); ++k) {
      const auto& a = stored[k];
      const auto& b = rep.rows[k];
      same = a.estimator == b.estimator && a.point == b.point && a.se == b.se && a.ci_low == b.ci_low &&
             a.ci_high == b.ci_high && a.k0_true == b.k0_true && a.theta_true == b.theta_true;
    }
    std::cerr << (same ? "replay matches " : "replay DIFFERS from ") << o.check << '\n';
    return same ? kOk : kNumeric;
  }

  Outputs outputs(o, "study");
  outputs.manifest.seed = s.seed;
  outputs.manifest.config_toml = scenario_to_toml(s);
  const StudyResult result = run_study(s, o.threads);
  write_summary_csv(std::cout, result.metrics);
  if (outputs.enabled()) {
    outputs.file("summary.csv", [&](std::ostream& out) { write_summary_csv(out, result.metrics); });
    outputs.file("replications.csv", [&](std::ostream& out) { write_replications_csv(out, result.replications); });
  }
  outputs.finish();
  return kOk;
}

int cmd_oracle(const Options& o) {
  const ScenarioConfig s = resolve_scenario(o);
  Outputs outputs(o, "oracle");
  outputs.manifest.seed = s.seed;
  outputs.manifest.config_toml = scenario_to_toml(s);
  Rng rng = oracle_rng(s.seed);
  const TrueEffect truth = true_effect_oracle(s, o.n_mc, rng);
  std::ostringstream csv;
  csv << "k0,effect,a,b,mcse\n";
  for (double k : parse_list(o.k_values, "k0"))
    csv << to_text(k) << ',' << to_text(truth.effect(k)) << ',' << to_text(truth.a) << ',' << to_text(truth.b) << ','
        << to_text(truth.mcse(k)) << '\n';
  std::cout << csv.str();
  if (outputs.enabled()) outputs.file("oracle.csv", [&](std::ostream& out) { out << csv.str(); });
  outputs.finish();
  return kOk;
}

int cmd_trajectories(const Options& o) {
  MvnParams<double> active, reference;
  VisitSchedule schedule;
  if (!o.data.empty()) {
    schedule = resolve_schedule(o);
    const MleFit fit = fit_mle(load_data(o, schedule), parse_covariance_structure(o.cov), parse_baseline_mean(o.baseline));
    active = fit.active;
    reference = fit.reference;
  } else {
    const ScenarioConfig s = resolve_scenario(o);
    schedule = s.schedule;
    active = s.law(Arm::active);
    reference = s.law(Arm::reference);
  }
  const MaintainedEffectModel model = effect_model(o, schedule);
  Outputs outputs(o, "trajectories");

  std::ostringstream csv;
  csv << "series,k,visit,week,mean\n";
  auto emit = [&](const std::string& series, const std::string& k, const Eigen::VectorXd& mean) {
    for (Index j = 0; j < mean.size(); ++j)
      csv << series << ',' << k << ',' << j << ',' << to_text(schedule.time(j)) << ',' << to_text(mean(j)) << '\n';
  };
  emit("active", "", active.mean);
  emit("reference", "", reference.mean);
  for (double k : parse_list(o.k_values, "k"))
    emit("implied", to_text(k), implied_trajectory(active, reference, o.pattern, model, k));
  std::cout << csv.str();
  if (outputs.enabled()) outputs.file("trajectories.csv", [&](std::ostream& out) { out << csv.str(); });
  outputs.finish();
  return kOk;
}

int cmd_simulate(const Options& o) {
  const ScenarioConfig s = resolve_scenario(o);
  const TrialDataset data = replication_data(s, o.index);
  if (o.output.empty() || o.output == "-") {
    write_csv(std::cout, data);
  } else {
    std::ofstream out(o.output, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + o.output);
    write_csv(out, data);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  o.argv.assign(argv, argv + argc);

  CLI::App app{"Reference-based imputation and Bayesian causal model estimates for longitudinal trials"};
  app.set_version_flag("--version", REFBCM_VERSION);
  app.require_subcommand(1);

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", o.seed, "Master random seed")->each([&](const std::string&) { o.seed_set = true; });
  };
  auto add_sampler = [&](CLI::App* cmd) {
    cmd->add_option("--draws", o.draws, "Kept posterior draws")
        ->check(CLI::PositiveNumber)
        ->each([&](const std::string&) { o.draws_set = true; });
    cmd->add_option("--burn-in", o.burn_in, "Discarded Gibbs iterations")->check(CLI::NonNegativeNumber);
    cmd->add_option("--thin", o.thin, "Keep every n-th iteration")->check(CLI::PositiveNumber);
    cmd->add_option("--iw-df-offset", o.iw_df_offset, "Inverse-Wishart prior df minus the dimension");
    cmd->add_option("--cov", o.cov, "Covariance structure: shared or per-arm");
    cmd->add_option("--baseline", o.baseline, "Baseline mean: common or per-arm");
  };
  auto add_data = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--data", o.data, "Trial CSV: id,arm,y0,...,y{jmax}");
    if (required) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--schedule", o.schedule, "Visit weeks for the outcome columns, e.g. 0,4,8,14,20,26");
  };
  auto add_scenario = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", o.scenario, "Scenario TOML file")->check(CLI::ExistingFile);
    cmd->add_option("--hypothesis", o.hypothesis, "Built-in design when no file: null or alternative");
    cmd->add_option("--ice", o.ice, "Built-in design when no file: low or high");
    cmd->add_option("--n-per-arm", o.n_per_arm, "Patients per arm");
    add_seed(cmd);
  };
  auto add_out = [&](CLI::App* cmd) { cmd->add_option("--out-dir", o.out_dir, "Write outputs and manifest here"); };

  auto* analyze = app.add_subcommand("analyze", "Estimate the treatment-policy effect on a trial dataset");
  add_data(analyze, true);
  add_seed(analyze);
  add_sampler(analyze);
  add_out(analyze);
  analyze->add_option("--method", o.methods,
                      "rubin:j2r | rubin:cir | condmean:j2r | condmean:cir | bcm (repeatable; default bcm)");
  analyze->add_option("--prior", o.priors, kPriorHelp);
  analyze->add_option("--model", o.model, "Maintained effect: constant (k0) or decay (k1 in (0,1))");
  analyze->add_option("--interval", o.interval, "BCM interval: auto, normal or percentile");
  analyze->add_option("--imputations", o.imputations, "Imputations for Rubin's rules")->check(CLI::Range(2, 1000000));
  analyze->add_option("--pattern-min", o.pattern_min, "Earliest ICE pattern in the Dirichlet support");
  analyze->add_option("--format", o.format, "table, csv or json");

  auto* sweep = app.add_subcommand("sweep", "Posterior summaries over a grid of normal-prior SDs");
  add_data(sweep, true);
  add_seed(sweep);
  add_sampler(sweep);
  add_out(sweep);
  sweep->add_option("--mean", o.prior_mean, "Prior mean of k0");
  sweep->add_option("--sigmas", o.sigmas, "Comma-separated prior SDs");
  sweep->add_option("--model", o.model, "constant or decay");
  sweep->add_option("--pattern-min", o.pattern_min, "Earliest ICE pattern in the Dirichlet support");

  auto* study = app.add_subcommand("study", "Run the simulation study");
  add_scenario(study);
  add_out(study);
  study->add_option("--reps", o.reps, "Replications")->check(CLI::PositiveNumber);
  study->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  study->add_option("--imputations", o.imputations, "Imputations for Rubin's rules")
      ->each([&](const std::string&) { o.imputations_set = true; });
  study->add_option("--draws", o.draws, "Kept posterior draws")->each([&](const std::string&) { o.draws_set = true; });
  study->add_option("--replay-index", o.replay_index, "Rerun one replication and print its rows");
  study->add_option("--check", o.check, "With --replay-index: compare against a stored replications.csv");

  auto* oracle = app.add_subcommand("oracle", "True treatment-policy effect of a scenario");
  add_scenario(oracle);
  add_out(oracle);
  oracle->add_option("--k0", o.k_values, "Comma-separated k0 values");
  oracle->add_option("--n-mc", o.n_mc, "Simulated active-arm patients")->check(CLI::Range(1000L, 1000000000L));

  auto* traj = app.add_subcommand("trajectories", "Implied mean trajectories after an ICE");
  add_scenario(traj);
  add_data(traj, false);
  add_out(traj);
  traj->add_option("--cov", o.cov, "Covariance structure when fitting --data");
  traj->add_option("--baseline", o.baseline, "Baseline mean when fitting --data");
  traj->add_option("--pattern", o.pattern, "Last on-treatment visit D");
  traj->add_option("--model", o.model, "constant or decay");
  traj->add_option("--k", o.k_values, "Comma-separated k values");

  auto* simulate = app.add_subcommand("simulate", "Write the dataset of one study replication");
  add_scenario(simulate);
  simulate->add_option("--index", o.index, "Replication index")->check(CLI::NonNegativeNumber);
  simulate->add_option("--output,-o", o.output, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*analyze) return cmd_analyze(o);
    if (*sweep) return cmd_sweep(o);
    if (*study) return cmd_study(o);
    if (*oracle) return cmd_oracle(o);
    if (*traj) return cmd_trajectories(o);
    if (*simulate) return cmd_simulate(o);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidParameter& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ValidationError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  }
  return kUsage;
}
