#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "refbcm/bcm.hpp"
#include "refbcm/sim.hpp"

using namespace refbcm;

namespace {

PosteriorDraws jittered_posterior(const MvnParams<double>& ref, const MvnParams<double>& act, int n, Rng& rng) {
  PosteriorDraws post;
  for (int l = 0; l < n; ++l) {
    ParameterDraw d{ref, act};
    for (Index j = 0; j < ref.dim(); ++j) {
      d.reference.mean(j) += 0.05 * rng.normal();
      d.active.mean(j) += 0.05 * rng.normal();
    }
    post.draws.push_back(d);
  }
  return post;
}

IcePatternCounts counts_of(std::initializer_list<int> c) {
  IcePatternCounts out;
  out.counts.resize(static_cast<Index>(c.size()));
  Index i = 0;
  for (int v : c) out.counts(i++) = v;
  return out;
}

}  // namespace

TEST_SUITE("bcm") {
  TEST_CASE("carry-forward K matrices") {
    const Eigen::MatrixXd k = carry_forward_K(2, 5, 1.0);
    REQUIRE(k.rows() == 3);
    REQUIRE(k.cols() == 3);
    CHECK(k.leftCols(2).isZero());
    CHECK(k.col(2).isOnes());
    CHECK(carry_forward_K(1, 5, 0.0).isZero());
    CHECK_THROWS_AS(carry_forward_K(5, 5, 1.0), InvalidParameter);
    const Eigen::Vector3d v(0.3, -0.2, 0.7);
    for (double k0 : {0.0, 0.4, 1.0, 1.3})
      CHECK((extraction_row(2, 5) * carry_forward_K(2, 5, k0) * v)(0) == doctest::Approx(k0 * 0.7));
  }

  TEST_CASE("decay K matrices") {
    const VisitSchedule s{0, 4, 8, 14, 20, 26};
    const Eigen::MatrixXd k = decay_K(2, 5, 0.5, s);
    CHECK(k(2, 2) == doctest::Approx(std::pow(0.5, 18)));
    CHECK(k(2, 2) == doctest::Approx(3.8147e-6).epsilon(1e-4));
    CHECK(k(0, 2) == doctest::Approx(std::pow(0.5, 6)));
    CHECK(k.leftCols(2).isZero());
    CHECK(((decay_K(1, 5, 1.0 - 1e-12, s) - carry_forward_K(1, 5, 1.0)).cwiseAbs().maxCoeff()) < 1e-9);
    CHECK(MaintainedEffectModel::decay(s).weight(2, 2, 0.5) == 1.0);
    CHECK_THROWS_AS(decay_K(2, 5, 1.0, s), InvalidParameter);
    CHECK_THROWS_AS(decay_K(2, 5, 0.0, s), InvalidParameter);
  }

  TEST_CASE("Dirichlet posterior for pattern probabilities") {
    Rng rng(1);
    const Eigen::MatrixXd pi = draw_pi(counts_of({10, 5, 5}), 40000, rng);
    const Eigen::VectorXd mean = pi.colwise().mean();
    const double alpha[] = {11, 6, 6};
    for (Index j = 0; j < 3; ++j) {
      const double m = alpha[j] / 23.0;
      const double sd = std::sqrt(m * (1 - m) / 24.0);
      CHECK(std::abs(mean(j) - m) < 3.0 * sd / std::sqrt(40000.0));
    }
    CHECK((pi.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK((pi.array() >= 0.0).all());

    Rng rng2(2);
    const Eigen::VectorXd flat = draw_pi(counts_of({0, 0, 0}), 40000, rng2).colwise().mean();
    for (Index j = 0; j < 3; ++j) CHECK(std::abs(flat(j) - 1.0 / 3.0) < 0.01);

    Rng rng3(3);
    CHECK(draw_pi(counts_of({4}), 10, rng3).isOnes());

    Rng rng4(4);
    const Eigen::MatrixXd support = draw_pi(counts_of({0, 3, 2}), 100, rng4, 1);
    CHECK(support.col(0).isZero());
    CHECK((support.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(draw_pi(counts_of({1, 3, 2}), 10, rng4, 1), InvalidParameter);
    CHECK(earliest_pattern(counts_of({0, 0, 3, 1})) == 2);
  }

  TEST_CASE("prior draws") {
    Rng rng(10);
    CHECK(draw_k0(K0Prior::point(0.0), 50, rng).isZero());

    const int n = 200000;
    Rng r1(11);
    const Eigen::VectorXd normal = draw_k0(K0Prior::normal(0.0, 0.5), n, r1);
    const double p_above = (normal.array() > 1.0).cast<double>().mean();
    CHECK(std::abs(p_above - 0.023) < 3.0 * std::sqrt(0.023 * 0.977 / n) + 0.0003);

    Rng r2(12);
    const Eigen::VectorXd half = draw_k0(K0Prior::truncated_normal(0.0, 0.5), n, r2);
    CHECK(half.minCoeff() >= 0.0);
    const double half_mean = 0.5 * std::sqrt(2.0 / M_PI);
    CHECK(half_mean == doctest::Approx(0.3989).epsilon(1e-4));
    const double half_sd = 0.5 * std::sqrt(1.0 - 2.0 / M_PI);
    CHECK(std::abs(half.mean() - half_mean) < 3.0 * half_sd / std::sqrt(n));
    CHECK(K0Prior::truncated_normal(0.0, 0.5).mean() == doctest::Approx(half_mean).epsilon(1e-12));
    CHECK(K0Prior::truncated_normal(0.0, 0.5).variance() == doctest::Approx(half_sd * half_sd).epsilon(1e-10));

    Rng r3(13);
    const K0Prior tri = K0Prior::triangular(0.0, 0.5, 1.0);
    const Eigen::VectorXd t = draw_k0(tri, n, r3);
    CHECK(t.minCoeff() >= 0.0);
    CHECK(t.maxCoeff() <= 1.0);
    CHECK(std::abs(t.mean() - 0.5) < 3.0 * std::sqrt(tri.variance() / n));
    CHECK(tri.variance() == doctest::Approx(1.0 / 24.0));
    // Quantile function inverts the CDF at the mode.
    CHECK(k0_quantile(tri, 0.5) == doctest::Approx(0.5));

    // Normal priors differing only in sd share the standard-normal stream.
    Rng a(20), b(20);
    const Eigen::VectorXd narrow = draw_k0(K0Prior::normal(1.0, 0.1), 100, a);
    const Eigen::VectorXd wide = draw_k0(K0Prior::normal(1.0, 0.5), 100, b);
    CHECK(((wide.array() - 1.0) - 5.0 * (narrow.array() - 1.0)).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("prior grammar") {
    CHECK(parse_k0_prior("point:0.5").kind == K0Prior::Kind::point);
    const K0Prior n = parse_k0_prior("normal:1,0.5");
    CHECK(n.kind == K0Prior::Kind::normal);
    CHECK(n.a == 1.0);
    CHECK(n.b == 0.5);
    const K0Prior t2 = parse_k0_prior("triangular:0.5,1");
    CHECK(t2.a == 0.0);
    CHECK(t2.b == 0.5);
    CHECK(t2.c == 1.0);
    const K0Prior t3 = parse_k0_prior("triangular:0,0,0.25");
    CHECK(t3.c == 0.25);
    const K0Prior tn = parse_k0_prior("truncnorm:0,0.5");
    CHECK(tn.kind == K0Prior::Kind::truncated_normal);
    CHECK(tn.c == 0.0);
    CHECK(tn.default_interval() == IntervalKind::percentile);
    CHECK(n.default_interval() == IntervalKind::normal_approx);
    for (const char* s : {"point:0", "normal:0,0.5", "triangular:0,0.5,1", "truncnorm:0,0.5,0"})
      CHECK(parse_k0_prior(s).to_string() == s);
    for (const char* bad : {"", "point", "normal:0", "normal:0,-1", "triangular:1,0.5", "triangular:0,2,1",
                            "gamma:1,1", "point:abc", "normal:0,0.5,1"})
      CHECK_THROWS_AS(parse_k0_prior(bad), ParseError);
  }

  TEST_CASE("effect decomposition is exact and matches the K-matrix route") {
    const ScenarioConfig s = ScenarioConfig::builtin(Hypothesis::alternative, IceLevel::high);
    Rng rng(5);
    const PosteriorDraws post = jittered_posterior(s.reference, s.active, 300, rng);
    Rng pr(6), kr(7);
    const Eigen::MatrixXd pi = draw_pi(counts_of({0, 30, 35, 20, 6, 109}), 300, pr, 1);
    const Eigen::VectorXd k = draw_k0(K0Prior::normal(0.3, 0.5), 300, kr);
    const EffectDraws e = effect_draws(post, pi, k, MaintainedEffectModel::constant());
    for (Index l = 0; l < 300; ++l) {
      const auto& d = post.draws[static_cast<std::size_t>(l)];
      CHECK(std::abs(e.theta(l) - (e.a(l) + k(l) * e.b(l))) <= 1e-12 * std::max(1.0, std::abs(e.theta(l))));
      const double direct =
          effect_via_K(d.active.mean, d.reference.mean, pi.row(l), k(l), MaintainedEffectModel::constant());
      CHECK(std::abs(direct - e.theta(l)) < 1e-12);
    }

    Rng k1r(8);
    const Eigen::VectorXd k1 = draw_k0(K0Prior::triangular(0.2, 0.5, 0.9), 300, k1r);
    const MaintainedEffectModel decay = MaintainedEffectModel::decay(s.schedule);
    const EffectDraws ed = effect_draws(post, pi, k1, decay);
    for (Index l = 0; l < 300; ++l) {
      const auto& d = post.draws[static_cast<std::size_t>(l)];
      CHECK(std::abs(effect_via_K(d.active.mean, d.reference.mean, pi.row(l), k1(l), decay) - ed.theta(l)) < 1e-12);
    }
    CHECK_THROWS_AS(effect_draws(post, pi.topRows(10), k, MaintainedEffectModel::constant()), InvalidParameter);
  }

  TEST_CASE("no ICEs means the k-free arm difference") {
    const ScenarioConfig s = ScenarioConfig::builtin(Hypothesis::alternative, IceLevel::high);
    Rng rng(9);
    const PosteriorDraws post = jittered_posterior(s.reference, s.active, 200, rng);
    Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(200, 6);
    pi.col(5).setOnes();
    Rng kr(1);
    const EffectDraws e = effect_draws(post, pi, draw_k0(K0Prior::normal(0, 2), 200, kr), MaintainedEffectModel::constant());
    for (Index l = 0; l < 200; ++l) {
      const auto& d = post.draws[static_cast<std::size_t>(l)];
      CHECK(e.theta(l) == doctest::Approx(d.active.mean(5) - d.reference.mean(5)));
    }
  }

  TEST_CASE("true parameters with the oracle pattern probabilities give the known truths") {
    const ScenarioConfig s = ScenarioConfig::builtin(Hypothesis::alternative, IceLevel::high);
    Rng rng(oracle_rng(s.seed));
    const TrueEffect truth = true_effect_oracle(s, 1000000, rng);
    const Eigen::RowVectorXd pi = truth.pi.transpose();
    CHECK(std::abs(effect_via_K(s.active.mean, s.reference.mean, pi, 0.0, MaintainedEffectModel::constant()) - -0.388) <
          0.005);
    CHECK(std::abs(effect_via_K(s.active.mean, s.reference.mean, pi, 1.0, MaintainedEffectModel::constant()) - -0.628) <
          0.005);
  }

  TEST_CASE("summaries") {
    const EstimateSummary c = summarize(Eigen::VectorXd::Constant(200, -0.4), IntervalKind::percentile);
    CHECK(c.point == doctest::Approx(-0.4));
    CHECK(c.sd == doctest::Approx(0.0));
    CHECK(c.ci_low == -0.4);
    CHECK(c.ci_high == -0.4);
    CHECK_THROWS_AS(summarize(Eigen::VectorXd::Zero(99), IntervalKind::normal_approx), InvalidParameter);

    Eigen::VectorXd ramp = Eigen::VectorXd::LinSpaced(1000, 1.0, 1000.0);
    std::reverse(ramp.data(), ramp.data() + ramp.size());
    const EstimateSummary r = summarize(ramp, IntervalKind::percentile);
    CHECK(r.ci_low == 26.0);
    CHECK(r.ci_high == 975.0);

    Rng rng(3);
    const int n = 100000;
    Eigen::VectorXd z(n);
    for (Index i = 0; i < n; ++i) z(i) = 2.0 + 0.5 * rng.normal();
    const EstimateSummary pct = summarize(z, IntervalKind::percentile);
    const EstimateSummary nrm = summarize(z, IntervalKind::normal_approx);
    CHECK(nrm.ci_low == doctest::Approx(nrm.point - 1.96 * nrm.sd));
    // SE of the 2.5% quantile: sqrt(p(1-p)/n) / density.
    const double q_se = std::sqrt(0.025 * 0.975 / n) / (std::exp(-0.5 * 1.96 * 1.96) / std::sqrt(2 * M_PI) / 0.5);
    CHECK(std::abs(pct.ci_low - nrm.ci_low) < 2.0 * q_se);
    CHECK(std::abs(pct.ci_high - nrm.ci_high) < 2.0 * q_se);
  }

  TEST_CASE("implied trajectories") {
    const ScenarioConfig s = ScenarioConfig::builtin(Hypothesis::alternative, IceLevel::high);
    const Eigen::VectorXd j2r = implied_trajectory(s.active, s.reference, 2, MaintainedEffectModel::constant(), 0.0);
    CHECK(j2r.head(3) == s.active.mean.head(3));
    CHECK(j2r.tail(3) == s.reference.mean.tail(3));
    const Eigen::VectorXd cir = implied_trajectory(s.active, s.reference, 2, MaintainedEffectModel::constant(), 1.0);
    Eigen::VectorXd want(6);
    want << 7.92, 7.55, 7.20, 7.20, 7.18, 7.18;
    CHECK((cir - want).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd half = implied_trajectory(s.active, s.reference, 2, MaintainedEffectModel::constant(), 0.5);
    CHECK(half(5) == doctest::Approx(7.78 - 0.3));

    const MaintainedEffectModel decay = MaintainedEffectModel::decay(s.schedule);
    const Eigen::VectorXd dec = implied_trajectory(s.active, s.reference, 2, decay, 0.5);
    CHECK(dec(3) == doctest::Approx(7.80 - 0.6 * std::pow(0.5, 6)));
    CHECK(std::abs(dec(5) - 7.78) < 1e-5);
    const Eigen::VectorXd same = implied_trajectory(s.reference, s.reference, 1, decay, 0.5);
    CHECK((same - s.reference.mean).cwiseAbs().maxCoeff() < 1e-14);
  }

  TEST_CASE("prior SD sweep: constant point estimate, non-decreasing posterior SD") {
    Rng data_rng(77);
    const ScenarioConfig s = ScenarioConfig::builtin(Hypothesis::alternative, IceLevel::high);
    const TrialDataset data = simulate_trial(s, data_rng);
    GibbsConfig g;
    g.n_total = 1200;
    g.n_burn = 200;
    g.seed = 5;
    const PosteriorDraws post = gibbs_sample(data, g);
    const Rng master(123);
    double previous_sd = 0.0;
    double base_point = 0.0;
    Rng pr0 = master.split(3);
    const Eigen::MatrixXd pi = draw_pi(pattern_counts(data, Arm::active), 1000, pr0, 1);
    const double mean_b = effect_draws(post, pi, Eigen::VectorXd::Zero(1000), MaintainedEffectModel::constant()).b.mean();
    for (double sigma : {0.0, 0.1, 0.2, 0.5, 1.0, 1.5}) {
      Rng pr = master.split(3), kr = master.split(4);
      const K0Prior prior = sigma == 0.0 ? K0Prior::point(0.0) : K0Prior::normal(0.0, sigma);
      const EstimateSummary e = bcm_estimate(data, post, BcmOptions{prior, {}, {}, 1}, pr, kr);
      CHECK(e.sd >= previous_sd);
      previous_sd = e.sd;
      if (sigma == 0.0) base_point = e.point;
      CHECK(std::abs(e.point - base_point) <= 3.0 * std::abs(mean_b) * sigma / std::sqrt(1000.0) + 1e-12);
    }
  }
}
