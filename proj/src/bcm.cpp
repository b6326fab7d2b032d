#include "refbcm/bcm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <vector>

#include <boost/math/distributions/normal.hpp>

namespace refbcm {

double MaintainedEffectModel::weight(Index j, Index u, double k) const {
  if (kind == EffectModelKind::constant) return k;
  return std::pow(k, schedule.time(u) - schedule.time(j));
}

Eigen::MatrixXd carry_forward_K(Index j, Index jmax, double k0) {
  if (j < 0 || j >= jmax) throw InvalidParameter("carry_forward_K: need 0 <= j < j_max");
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(jmax - j, j + 1);
  k.col(j).setConstant(k0);
  return k;
}

Eigen::MatrixXd decay_K(Index j, Index jmax, double k1, const VisitSchedule& schedule) {
  if (j < 0 || j >= jmax) throw InvalidParameter("decay_K: need 0 <= j < j_max");
  if (!(k1 > 0.0 && k1 < 1.0)) throw InvalidParameter("decay_K: k1 must lie in (0, 1)");
  if (schedule.jmax() != jmax) throw InvalidParameter("decay_K: schedule length does not match j_max");
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(jmax - j, j + 1);
  for (Index u = j + 1; u <= jmax; ++u) k(u - j - 1, j) = std::pow(k1, schedule.time(u) - schedule.time(j));
  return k;
}

Eigen::RowVectorXd extraction_row(Index j, Index jmax) {
  if (j < 0 || j >= jmax) throw InvalidParameter("extraction_row: need 0 <= j < j_max");
  Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(jmax - j);
  e(jmax - j - 1) = 1.0;
  return e;
}

std::string_view to_string(IntervalKind k) { return k == IntervalKind::percentile ? "percentile" : "normal"; }

// --- priors ----------------------------------------------------------------

namespace {

const boost::math::normal_distribution<double> kStdNormal(0.0, 1.0);

// Mills-ratio style helper: phi(alpha) / (1 - Phi(alpha)).
double hazard(double alpha) {
  return boost::math::pdf(kStdNormal, alpha) / boost::math::cdf(boost::math::complement(kStdNormal, alpha));
}

}  // namespace

K0Prior K0Prior::normal(double mean, double sd) {
  K0Prior p{Kind::normal, mean, sd, 0.0};
  p.validate();
  return p;
}

K0Prior K0Prior::triangular(double min, double mode, double max) {
  K0Prior p{Kind::triangular, min, mode, max};
  p.validate();
  return p;
}

K0Prior K0Prior::truncated_normal(double mean, double sd, double lower) {
  K0Prior p{Kind::truncated_normal, mean, sd, lower};
  p.validate();
  return p;
}

void K0Prior::validate() const {
  const bool finite = std::isfinite(a) && std::isfinite(b) && std::isfinite(c);
  if (!finite) throw InvalidParameter("k0 prior parameters must be finite");
  switch (kind) {
    case Kind::point:
      break;
    case Kind::normal:
      if (b < 0.0) throw InvalidParameter("normal k0 prior needs sd >= 0");
      break;
    case Kind::triangular:
      if (!(a <= b && b <= c && a < c)) throw InvalidParameter("triangular k0 prior needs min <= mode <= max and min < max");
      break;
    case Kind::truncated_normal:
      if (!(b > 0.0)) throw InvalidParameter("truncated-normal k0 prior needs sd > 0");
      break;
  }
}

double K0Prior::mean() const {
  switch (kind) {
    case Kind::point:
    case Kind::normal:
      return a;
    case Kind::triangular:
      return (a + b + c) / 3.0;
    case Kind::truncated_normal:
      return a + b * hazard((c - a) / b);
  }
  return a;
}

double K0Prior::variance() const {
  switch (kind) {
    case Kind::point:
      return 0.0;
    case Kind::normal:
      return b * b;
    case Kind::triangular:
      return (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0;
    case Kind::truncated_normal: {
      const double alpha = (c - a) / b;
      const double h = hazard(alpha);
      return b * b * (1.0 + alpha * h - h * h);
    }
  }
  return 0.0;
}

IntervalKind K0Prior::default_interval() const {
  return kind == Kind::point || kind == Kind::normal ? IntervalKind::normal_approx : IntervalKind::percentile;
}

std::string K0Prior::to_string() const {
  std::ostringstream s;
  s.precision(12);
  switch (kind) {
    case Kind::point:
      s << "point:" << a;
      break;
    case Kind::normal:
      s << "normal:" << a << ',' << b;
      break;
    case Kind::triangular:
      s << "triangular:" << a << ',' << b << ',' << c;
      break;
    case Kind::truncated_normal:
      s << "truncnorm:" << a << ',' << b << ',' << c;
      break;
  }
  return s.str();
}

K0Prior parse_k0_prior(std::string_view spec) {
  static constexpr std::string_view grammar =
      "prior grammar: point:v | normal:mean,sd | triangular:mode,max | triangular:min,mode,max | "
      "truncnorm:mean,sd[,lower]";
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) throw ParseError("malformed prior '" + std::string(spec) + "'; " + std::string(grammar));
  const std::string_view kind = spec.substr(0, colon);
  std::string_view rest = spec.substr(colon + 1);

  std::vector<double> params;
  while (true) {
    const auto comma = rest.find(',');
    const std::string_view token = rest.substr(0, comma);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (token.empty() || ec != std::errc() || ptr != token.data() + token.size())
      throw ParseError("malformed prior '" + std::string(spec) + "'; " + std::string(grammar));
    params.push_back(v);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }

  const auto need = [&](std::size_t lo, std::size_t hi) {
    if (params.size() < lo || params.size() > hi)
      throw ParseError("wrong number of parameters in prior '" + std::string(spec) + "'; " + std::string(grammar));
  };
  try {
    if (kind == "point") {
      need(1, 1);
      return K0Prior::point(params[0]);
    }
    if (kind == "normal") {
      need(2, 2);
      return K0Prior::normal(params[0], params[1]);
    }
    if (kind == "triangular") {
      need(2, 3);
      return params.size() == 2 ? K0Prior::triangular(0.0, params[0], params[1])
                                : K0Prior::triangular(params[0], params[1], params[2]);
    }
    if (kind == "truncnorm") {
      need(2, 3);
      return K0Prior::truncated_normal(params[0], params[1], params.size() == 3 ? params[2] : 0.0);
    }
  } catch (const InvalidParameter& e) {
    throw ParseError(std::string(e.what()) + "; " + std::string(grammar));
  }
  throw ParseError("unknown prior kind '" + std::string(kind) + "'; " + std::string(grammar));
}

double k0_quantile(const K0Prior& prior, double u) {
  switch (prior.kind) {
    case K0Prior::Kind::point:
      return prior.a;
    case K0Prior::Kind::normal:
      return prior.b == 0.0 ? prior.a : prior.a + prior.b * boost::math::quantile(kStdNormal, u);
    case K0Prior::Kind::triangular: {
      const double lo = prior.a, mode = prior.b, hi = prior.c;
      const double split = (mode - lo) / (hi - lo);
      if (u < split) return lo + std::sqrt(u * (hi - lo) * (mode - lo));
      return hi - std::sqrt((1.0 - u) * (hi - lo) * (hi - mode));
    }
    case K0Prior::Kind::truncated_normal: {
      const double alpha = (prior.c - prior.a) / prior.b;
      const double tail = boost::math::cdf(boost::math::complement(kStdNormal, alpha));
      const double z = boost::math::quantile(boost::math::complement(kStdNormal, (1.0 - u) * tail));
      return std::max(prior.c, prior.a + prior.b * z);
    }
  }
  return prior.a;
}

Eigen::VectorXd draw_k0(const K0Prior& prior, Index draws, Rng& rng) {
  prior.validate();
  Eigen::VectorXd out(draws);
  switch (prior.kind) {
    case K0Prior::Kind::point:
      out.setConstant(prior.a);
      break;
    case K0Prior::Kind::normal:
      for (Index l = 0; l < draws; ++l) out(l) = prior.a + prior.b * rng.normal();
      break;
    default:
      for (Index l = 0; l < draws; ++l) out(l) = k0_quantile(prior, rng.uniform());
      break;
  }
  return out;
}

// --- pattern probabilities -------------------------------------------------

Eigen::MatrixXd draw_pi(const IcePatternCounts& counts, Index draws, Rng& rng, Index d_min) {
  const Index patterns = counts.counts.size();
  if (draws < 1) throw InvalidParameter("draw_pi: need at least one draw");
  if (d_min < 0 || d_min >= patterns) throw InvalidParameter("draw_pi: d_min outside the pattern range");
  if ((counts.counts.head(d_min).array() != 0).any())
    throw InvalidParameter("draw_pi: observed patterns fall below the configured support");

  Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(draws, patterns);
  for (Index l = 0; l < draws; ++l) {
    double total = 0.0;
    for (Index j = d_min; j < patterns; ++j) {
      pi(l, j) = rng.gamma(static_cast<double>(counts.counts(j)) + 1.0);
      total += pi(l, j);
    }
    pi.row(l) /= total;
  }
  return pi;
}

Index earliest_pattern(const IcePatternCounts& counts) {
  for (Index j = 0; j < counts.counts.size(); ++j)
    if (counts.counts(j) > 0) return j;
  return 0;
}

// --- effect ----------------------------------------------------------------

double effect_via_K(const Eigen::VectorXd& active_mean, const Eigen::VectorXd& reference_mean,
                    const Eigen::RowVectorXd& pi, double k, const MaintainedEffectModel& model) {
  const Index jmax = active_mean.size() - 1;
  const Eigen::VectorXd diff = active_mean - reference_mean;
  double theta = pi(jmax) * diff(jmax);
  for (Index j = 0; j < jmax; ++j) {
    if (pi(j) == 0.0) continue;
    const Eigen::MatrixXd kj = model.kind == EffectModelKind::constant ? carry_forward_K(j, jmax, k)
                                                                        : decay_K(j, jmax, k, model.schedule);
    theta += pi(j) * (extraction_row(j, jmax) * kj * diff.head(j + 1))(0);
  }
  return theta;
}

EffectDraws effect_draws(const PosteriorDraws& posterior, const Eigen::MatrixXd& pi, const Eigen::VectorXd& k,
                         const MaintainedEffectModel& model) {
  const Index draws = static_cast<Index>(posterior.size());
  if (pi.rows() != draws || k.size() != draws)
    throw InvalidParameter("effect_draws: posterior, pattern and k draws must have equal length");
  EffectDraws out{Eigen::VectorXd(draws), Eigen::VectorXd(draws), Eigen::VectorXd(draws), Eigen::VectorXd(draws)};
  for (Index l = 0; l < draws; ++l) {
    const auto& d = posterior.draws[static_cast<std::size_t>(l)];
    const Eigen::VectorXd diff = d.active.mean - d.reference.mean;
    const Index jmax = diff.size() - 1;
    if (pi.cols() != jmax + 1) throw InvalidParameter("effect_draws: pattern draws do not match the schedule");
    out.a(l) = pi(l, jmax) * diff(jmax);
    double b = 0.0;
    if (model.kind == EffectModelKind::constant) {
      for (Index j = 0; j < jmax; ++j) b += pi(l, j) * diff(j);
      out.multiplier(l) = k(l);
    } else {
      for (Index j = 0; j < jmax; ++j) b += pi(l, j) * model.weight(j, jmax, k(l)) * diff(j);
      out.multiplier(l) = 1.0;
    }
    out.b(l) = b;
    out.theta(l) = out.a(l) + out.multiplier(l) * b;
  }
  return out;
}

EstimateSummary summarize(const Eigen::VectorXd& theta, IntervalKind interval) {
  const Index n = theta.size();
  if (n < 100) throw InvalidParameter("summarize needs at least 100 draws");
  EstimateSummary out;
  out.draws = n;
  out.interval = interval;
  out.point = theta.mean();
  out.sd = std::sqrt((theta.array() - out.point).square().sum() / static_cast<double>(n - 1));
  if (interval == IntervalKind::normal_approx) {
    out.ci_low = out.point - 1.96 * out.sd;
    out.ci_high = out.point + 1.96 * out.sd;
  } else {
    std::vector<double> sorted(theta.data(), theta.data() + n);
    std::sort(sorted.begin(), sorted.end());
    const auto lo = static_cast<std::size_t>(std::floor(0.025 * static_cast<double>(n)));
    const auto hi = static_cast<std::size_t>(std::ceil(0.975 * static_cast<double>(n))) - 1;
    out.ci_low = sorted[lo];
    out.ci_high = sorted[hi];
  }
  return out;
}

Eigen::VectorXd implied_trajectory(const MvnParams<double>& active, const MvnParams<double>& reference, int last_observed,
                                   const MaintainedEffectModel& model, double k) {
  const Index p = active.dim();
  if (last_observed < 0 || last_observed >= p - 1) throw InvalidParameter("implied_trajectory: need 0 <= D < j_max");
  Eigen::VectorXd out = active.mean;
  const double gap = active.mean(last_observed) - reference.mean(last_observed);
  for (Index u = last_observed + 1; u < p; ++u) out(u) = reference.mean(u) + model.weight(last_observed, u, k) * gap;
  return out;
}

EstimateSummary bcm_estimate(const TrialDataset& data, const PosteriorDraws& posterior, const BcmOptions& options,
                             Rng& pi_rng, Rng& k_rng) {
  const Index draws = static_cast<Index>(posterior.size());
  const IcePatternCounts counts = pattern_counts(data, Arm::active);
  const Index d_min = options.d_min < 0 ? earliest_pattern(counts) : options.d_min;
  const Eigen::MatrixXd pi = draw_pi(counts, draws, pi_rng, d_min);
  const Eigen::VectorXd k = draw_k0(options.prior, draws, k_rng);
  const EffectDraws effect = effect_draws(posterior, pi, k, options.model);
  return summarize(effect.theta, options.interval.value_or(options.prior.default_interval()));
}

}  // namespace refbcm
