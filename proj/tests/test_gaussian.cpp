#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "refbcm/gaussian.hpp"

using namespace refbcm;

namespace {

VisitSchedule design_schedule() { return VisitSchedule{0, 4, 8, 14, 20, 26}; }

Eigen::VectorXd design_variances() {
  Eigen::VectorXd v(6);
  v << 0.48, 0.8, 1.1, 1.4, 1.23, 1.48;
  return v;
}

}  // namespace

TEST_SUITE("gaussian") {
  TEST_CASE("spatial power covariance reproduces the design variances") {
    const Eigen::MatrixXd cov = spatial_power_cov(design_variances().cwiseSqrt(), design_schedule(), 0.8, 4.0);
    for (Index j = 0; j < 6; ++j) CHECK(cov(j, j) == doctest::Approx(design_variances()(j)).epsilon(1e-14));
    CHECK(cov(0, 1) == doctest::Approx(std::sqrt(0.48 * 0.8) * 0.8).epsilon(1e-14));
    CHECK(cov(0, 1) == doctest::Approx(0.4957).epsilon(1e-4));
    // (8 - 0) / 4 = 2 lag units.
    CHECK(cov(0, 2) == doctest::Approx(std::sqrt(0.48 * 1.1) * 0.64).epsilon(1e-14));
    CHECK(cov.isApprox(cov.transpose()));
    CHECK(is_positive_definite(cov));

    const Eigen::MatrixXd unit = spatial_power_cov(Eigen::Vector2d(1, 1), VisitSchedule{0, 4}, 0.5, 4.0);
    CHECK(unit(0, 0) == 1.0);
    CHECK(unit(0, 1) == doctest::Approx(0.5));
  }

  TEST_CASE("spatial power covariance rejects bad inputs") {
    CHECK_THROWS_AS(spatial_power_cov(Eigen::Vector2d(1, -1), VisitSchedule{0, 4}, 0.5, 4.0), InvalidParameter);
    CHECK_THROWS_AS(spatial_power_cov(Eigen::Vector2d(1, 1), VisitSchedule{0, 4}, 1.5, 4.0), InvalidParameter);
    CHECK_THROWS_AS(spatial_power_cov(Eigen::Vector3d(1, 1, 1), VisitSchedule{0, 4}, 0.5, 4.0), InvalidParameter);
    CHECK_THROWS_AS(VisitSchedule({0, 4, 4}), InvalidParameter);
  }

  TEST_CASE("positive-definiteness gate") {
    Eigen::Matrix2d singular;
    singular << 1, 1, 1, 1;
    CHECK_FALSE(is_positive_definite(singular));
    CHECK_THROWS_AS(CheckedCholesky<double>(Eigen::MatrixXd(singular)).require("test"), NumericError);
    Eigen::Matrix2d indefinite;
    indefinite << 1, 2, 2, 1;
    CHECK_FALSE(is_positive_definite(indefinite));
    Eigen::Matrix2d asymmetric;
    asymmetric << 2, 0.5, 0.1, 2;
    CHECK_FALSE(is_positive_definite(asymmetric));
    CHECK(is_positive_definite(Eigen::Matrix2d::Identity()));
  }

  TEST_CASE("conditioning on an independent block returns the marginal") {
    MvnParams<double> p{Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 2, 3).asDiagonal()};
    const Index obs[] = {1};
    const auto c = condition_mvn(p, obs, Eigen::VectorXd(Eigen::VectorXd::Constant(1, 10.0)));
    CHECK(c.mean(0) == doctest::Approx(1.0));
    CHECK(c.mean(1) == doctest::Approx(3.0));
    CHECK(c.cov(0, 0) == doctest::Approx(1.0));
    CHECK(c.cov(1, 1) == doctest::Approx(3.0));
    CHECK(c.cov(0, 1) == doctest::Approx(0.0));
  }

  TEST_CASE("observing the means leaves the unobserved means unchanged") {
    const Eigen::MatrixXd cov = spatial_power_cov(design_variances().cwiseSqrt(), design_schedule(), 0.8, 4.0);
    Eigen::VectorXd mu(6);
    mu << 7.92, 7.55, 7.20, 7.10, 7.05, 7.05;
    const Index obs[] = {0, 1, 2};
    const auto c = condition_mvn(MvnParams<double>{mu, cov}, obs, Eigen::VectorXd(mu.head(3)));
    CHECK((c.mean - mu.tail(3)).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("conditional law matches grid integration of the joint density") {
    Eigen::Matrix3d cov;
    cov << 1.0, 0.6, 0.36, 0.6, 1.5, 0.7, 0.36, 0.7, 2.0;
    const MvnParams<double> params{Eigen::Vector3d(0.5, -1.0, 2.0), cov};
    const std::vector<std::vector<Index>> cases = {{1}, {0}, {2}, {0, 2}, {0, 1}, {1, 2}};
    for (const auto& obs : cases) {
      const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(static_cast<Index>(obs.size()), 0.3, 1.2);
      const auto c = condition_mvn(params, obs, y);
      const auto g = oracles::grid_conditional(params, obs, y);
      CHECK((c.mean - g.mean).cwiseAbs().maxCoeff() < 1e-4);
      CHECK((c.cov - g.cov).cwiseAbs().maxCoeff() < 1e-4);
    }
  }

  TEST_CASE("leading-block conditioning agrees with general conditioning") {
    const Eigen::MatrixXd cov = spatial_power_cov(design_variances().cwiseSqrt(), design_schedule(), 0.8, 4.0);
    Eigen::VectorXd mu(6);
    mu << 7.92, 7.82, 7.80, 7.80, 7.78, 7.78;
    const Eigen::Vector3d y(8.1, 7.0, 7.7);
    const auto lead = condition_on_leading<double>(cov, 3);
    const Index obs[] = {0, 1, 2};
    const auto general = condition_mvn(MvnParams<double>{mu, cov}, obs, Eigen::VectorXd(y));
    CHECK((lead.mean(mu, y) - general.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((lead.cov - general.cov).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::MatrixXd f = lead.cov_factor.triangularView<Eigen::Lower>();
    CHECK(((f * f.transpose()) - lead.cov).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("MVN sampling") {
    const Eigen::MatrixXd cov = spatial_power_cov(design_variances().cwiseSqrt(), design_schedule(), 0.8, 4.0);
    Eigen::VectorXd mu(6);
    mu << 7.92, 7.55, 7.20, 7.10, 7.05, 7.05;
    const MvnParams<double> params{mu, cov};

    Rng rng(7);
    CHECK(sample_mvn(params, rng, 0).rows() == 0);

    Rng a(11), b(11);
    CHECK(sample_mvn(params, a, 50) == sample_mvn(params, b, 50));

    Rng big(2024);
    const Eigen::MatrixXd x = sample_mvn(params, big, 200000);
    const Eigen::VectorXd mean = x.colwise().mean();
    CHECK((mean - mu).cwiseAbs().maxCoeff() < 0.01);
    const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
    const Eigen::MatrixXd s = centered.transpose() * centered / 199999.0;
    CHECK((s - cov).cwiseAbs().maxCoeff() < 0.03);
  }
}
