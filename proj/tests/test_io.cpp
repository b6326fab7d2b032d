#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "refbcm/report.hpp"
#include "refbcm/scenario_io.hpp"

using namespace refbcm;

TEST_SUITE("io") {
  TEST_CASE("scenario TOML round trip") {
    ScenarioConfig s = ScenarioConfig::builtin(Hypothesis::null, IceLevel::low);
    s.name = "round trip";
    s.seed = 12345678901ULL;
    s.estimators = {parse_estimator("rubin:cir"), parse_estimator("bcm:normal:0.5,0.25")};
    s.gibbs.thin = 3;
    s.gibbs.baseline = BaselineMean::per_arm;
    const ScenarioConfig t = parse_scenario(scenario_to_toml(s), "<mem>");
    CHECK(t.name == s.name);
    CHECK(t.hypothesis == s.hypothesis);
    CHECK(t.ice_level == s.ice_level);
    CHECK(t.seed == s.seed);
    CHECK(t.gibbs.thin == 3);
    CHECK(t.gibbs.baseline == BaselineMean::per_arm);
    CHECK(t.active.mean == s.active.mean);
    CHECK(t.reference.cov == s.reference.cov);
    REQUIRE(t.estimators.size() == 2);
    CHECK(t.estimators[1].label() == "bcm:normal:0.5,0.25");
    REQUIRE(t.dropout.steps.size() == s.dropout.steps.size());
    CHECK(t.dropout.steps[3].beta_prev[1] == s.dropout.steps[3].beta_prev[1]);
    CHECK(scenario_to_toml(t) == scenario_to_toml(s));
  }

  TEST_CASE("partial scenarios start from the built-in design") {
    const ScenarioConfig s = parse_scenario(R"(
hypothesis = "alternative"
ice_level = "low"
n_per_arm = 50
[dropout]
intercept = -14.0
)",
                                            "<mem>");
    CHECK(s.n_per_arm == 50);
    for (const auto& step : s.dropout.steps) CHECK(step.intercept == -14.0);
    CHECK(s.reference.mean == ScenarioConfig::builtin(Hypothesis::alternative, IceLevel::low).reference.mean);
  }

  TEST_CASE("scenario errors") {
    CHECK_THROWS_AS(parse_scenario("n_per_arm = [", "x.toml"), ParseError);
    try {
      parse_scenario("seed = 1\nn_per_arm = \"many\"\n", "x.toml");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("n_per_arm") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_scenario("hypothesis = \"maybe\"", "x.toml"), ParseError);
    CHECK_THROWS_AS(parse_scenario("[gibbs]\nbaseline = \"pooled\"\n", "x.toml"), ParseError);
    CHECK_THROWS_AS(parse_scenario("[outcomes]\nactive_mean = [1.0, 2.0]\n", "x.toml"), ParseError);
    CHECK_THROWS_AS(parse_scenario("n_per_arm = 0", "x.toml"), ValidationError);
    CHECK_THROWS_AS(parse_scenario("[outcomes]\ncovariance = [[1,0,0,0,0,0],[0,1,0,0,0,0],[0,0,1,0,0,0],"
                                   "[0,0,0,1,0,0],[0,0,0,0,1,0],[0,0,0,0,0,-1]]\n",
                                   "x.toml"),
                    ValidationError);
    CHECK_THROWS_AS(load_scenario("/nonexistent/scenario.toml"), ValidationError);
  }

  TEST_CASE("record emitters") {
    std::vector<ResultRecord> records = {{"bcm:normal:0,0.5", -0.5, 0.125, -0.75, -0.25, 10000, "percentile"},
                                         {"rubin:j2r", 1.0 / 3.0, 0.2, -0.1, 0.7, 100, "normal"}};
    std::ostringstream csv;
    write_records_csv(csv, records);
    std::istringstream lines(csv.str());
    std::string header, first, second;
    std::getline(lines, header);
    std::getline(lines, first);
    std::getline(lines, second);
    CHECK(header == "method,point,se,ci_low,ci_high,m,interval");
    CHECK(first == "\"bcm:normal:0,0.5\",-0.5,0.125,-0.75,-0.25,10000,percentile");
    CHECK(second.rfind("rubin:j2r,0.3333333333333333,", 0) == 0);

    std::ostringstream js;
    write_records_json(js, records);
    const auto parsed = nlohmann::json::parse(js.str());
    REQUIRE(parsed.is_array());
    CHECK(parsed[0]["method"] == "bcm:normal:0,0.5");
    CHECK(parsed[1]["point"].get<double>() == 1.0 / 3.0);
    CHECK(parsed[0]["m"] == 10000);

    std::ostringstream table;
    write_records_table(table, records);
    CHECK(table.str().find("rubin:j2r") != std::string::npos);
  }

  TEST_CASE("the run manifest reloads as a scenario") {
    ScenarioConfig s = ScenarioConfig::builtin(Hypothesis::alternative, IceLevel::high);
    s.replications = 7;
    RunManifest m;
    m.command = "study";
    m.argv = {"refbcm", "study", "--reps", "7"};
    m.config_toml = scenario_to_toml(s);
    m.seed = s.seed;
    m.version = "0.1.0";
    m.started = m.finished = utc_timestamp();
    m.outputs = {"summary.csv"};
    const auto path = std::filesystem::temp_directory_path() / "refbcm_manifest_test.toml";
    m.write(path);
    const ScenarioConfig back = load_scenario(path);
    CHECK(back.replications == 7);
    CHECK(scenario_to_toml(back) == scenario_to_toml(s));
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    CHECK(buf.str().find("[run]") != std::string::npos);
    std::filesystem::remove(path);
    CHECK(utc_timestamp().size() == 20);
  }
}

TEST_CASE("bundled scenario files spell out the built-in designs" * doctest::test_suite("io")) {
  const std::filesystem::path dir = std::filesystem::path(REFBCM_SOURCE_DIR) / "scenarios";
  for (Hypothesis h : {Hypothesis::alternative, Hypothesis::null})
    for (IceLevel l : {IceLevel::high, IceLevel::low}) {
      const ScenarioConfig built_in = ScenarioConfig::builtin(h, l);
      const ScenarioConfig file = load_scenario(dir / (built_in.name + ".toml"));
      CHECK(scenario_to_toml(file) == scenario_to_toml(built_in));
    }
  const ScenarioConfig app = load_scenario(dir / "synthetic_application.toml");
  CHECK(app.n_per_arm == 1000);
}
