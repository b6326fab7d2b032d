#include "refbcm/rbi.hpp"

#include <array>
#include <string>

namespace refbcm {

std::string_view to_string(RbiMethod m) { return m == RbiMethod::j2r ? "j2r" : "cir"; }

RbiMethod parse_rbi_method(std::string_view text) {
  if (text == "j2r" || text == "J2R") return RbiMethod::j2r;
  if (text == "cir" || text == "CIR") return RbiMethod::cir;
  throw ParseError("unknown reference-based method '" + std::string(text) + "' (expected j2r or cir)");
}

std::optional<ImputationDistribution> build_imputation_distribution(RbiMethod method, const MvnParams<double>& active,
                                                                    const MvnParams<double>& reference,
                                                                    int last_observed) {
  const Index p = active.dim();
  if (reference.dim() != p) throw InvalidParameter("imputation distribution: arm dimensions differ");
  if (last_observed < 0 || last_observed > p - 1) throw InvalidParameter("imputation distribution: pattern out of range");
  if (last_observed == p - 1) return std::nullopt;

  const Index k = last_observed + 1;
  const Index post = p - k;
  ImputationDistribution out;
  out.pattern = last_observed;
  out.mean.resize(p);
  out.mean.head(k) = active.mean.head(k);
  out.mean.tail(post) = reference.mean.tail(post);
  if (method == RbiMethod::cir)
    out.mean.tail(post).array() += active.mean(last_observed) - reference.mean(last_observed);

  const auto ref_cond = condition_on_leading<double>(reference.cov, k);
  const Eigen::MatrixXd pre = active.cov.topLeftCorner(k, k);
  const Eigen::MatrixXd post_pre = ref_cond.regression * pre;
  out.cov.resize(p, p);
  out.cov.topLeftCorner(k, k) = pre;
  out.cov.bottomLeftCorner(post, k) = post_pre;
  out.cov.topRightCorner(k, post) = post_pre.transpose();
  out.cov.bottomRightCorner(post, post) = ref_cond.cov + post_pre * ref_cond.regression.transpose();
  return out;
}

namespace {

// Per-pattern conditional laws for both arms under one parameter set.
class PatternImputer {
 public:
  PatternImputer(const MvnParams<double>& reference, const MvnParams<double>& active, RbiMethod method,
                 const Eigen::VectorXi& needed_reference, const Eigen::VectorXi& needed_active) {
    const Index p = active.dim();
    laws_[0].resize(static_cast<std::size_t>(p - 1));
    laws_[1].resize(static_cast<std::size_t>(p - 1));
    for (int d = 0; d < p - 1; ++d) {
      if (needed_reference(d) > 0)
        laws_[0][d] = Law{reference.mean, condition_on_leading<double>(reference.cov, d + 1)};
      if (needed_active(d) > 0) {
        const auto dist = build_imputation_distribution(method, active, reference, d);
        laws_[1][d] = Law{dist->mean, condition_on_leading<double>(dist->cov, d + 1)};
      }
    }
  }

  void fill_mean(PatientRecord& rec) const {
    if (!rec.dropped_out() || rec.complete()) return;
    const Law& law = laws_[rec.arm == Arm::active][static_cast<std::size_t>(rec.last_observed)];
    const Index k = rec.last_observed + 1;
    rec.outcomes.tail(rec.outcomes.size() - k) = law.cond.mean(law.mean, rec.outcomes.head(k));
  }

  void fill_draw(PatientRecord& rec, Rng& rng) const {
    if (!rec.dropped_out() || rec.complete()) return;
    const Law& law = laws_[rec.arm == Arm::active][static_cast<std::size_t>(rec.last_observed)];
    const Index k = rec.last_observed + 1;
    const Index post = rec.outcomes.size() - k;
    Eigen::VectorXd z(post);
    for (Index t = 0; t < post; ++t) z(t) = rng.normal();
    rec.outcomes.tail(post) =
        law.cond.mean(law.mean, rec.outcomes.head(k)) + law.cond.cov_factor.triangularView<Eigen::Lower>() * z;
  }

 private:
  struct Law {
    Eigen::VectorXd mean;
    LeadingConditional<double> cond;
  };
  std::array<std::vector<Law>, 2> laws_;
};

PatternImputer make_imputer(const TrialDataset& data, const MvnParams<double>& reference, const MvnParams<double>& active,
                            RbiMethod method) {
  return PatternImputer(reference, active, method, pattern_counts(data, Arm::reference).counts,
                        pattern_counts(data, Arm::active).counts);
}

std::vector<std::size_t> spaced_draws(std::size_t available, int m) {
  if (m < 1) throw InvalidParameter("number of imputations must be positive");
  if (static_cast<std::size_t>(m) > available)
    throw InvalidParameter("requested " + std::to_string(m) + " imputations but only " + std::to_string(available) +
                           " posterior draws are available");
  std::vector<std::size_t> idx(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = (i + 1) * available / static_cast<std::size_t>(m) - 1;
  return idx;
}

template <typename Visit>
void for_each_imputation(const TrialDataset& data, const PosteriorDraws& draws, RbiMethod method, int m, Rng& rng,
                         Visit&& visit) {
  const auto reference_counts = pattern_counts(data, Arm::reference).counts;
  const auto active_counts = pattern_counts(data, Arm::active).counts;
  for (std::size_t l : spaced_draws(draws.size(), m)) {
    const auto& draw = draws.draws[l];
    const PatternImputer imputer(draw.reference, draw.active, method, reference_counts, active_counts);
    std::vector<PatientRecord> records = data.patients();
    for (auto& rec : records) imputer.fill_draw(rec, rng);
    visit(TrialDataset(data.schedule(), std::move(records)));
  }
}

}  // namespace

std::vector<TrialDataset> impute_multiple(const TrialDataset& data, const PosteriorDraws& draws, RbiMethod method,
                                          int m, Rng& rng) {
  std::vector<TrialDataset> out;
  out.reserve(static_cast<std::size_t>(m));
  for_each_imputation(data, draws, method, m, rng, [&](TrialDataset completed) { out.push_back(std::move(completed)); });
  return out;
}

TrialDataset conditional_mean_impute(const TrialDataset& data, const MleFit& mle, RbiMethod method) {
  const PatternImputer imputer = make_imputer(data, mle.reference, mle.active, method);
  std::vector<PatientRecord> records = data.patients();
  for (auto& rec : records) imputer.fill_mean(rec);
  return TrialDataset(data.schedule(), std::move(records));
}

AncovaResult analyze_ancova(const TrialDataset& completed) {
  const Index n = static_cast<Index>(completed.size());
  const Index last = completed.jmax();
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    const auto& rec = completed.patients()[static_cast<std::size_t>(i)];
    if (!std::isfinite(rec.outcomes(last)) || !std::isfinite(rec.outcomes(0)))
      throw InvalidParameter("ANCOVA needs completed data (patient " + rec.id + " has a missing final visit)");
    x(i, 0) = 1.0;
    x(i, 1) = rec.outcomes(0);
    x(i, 2) = rec.arm == Arm::active ? 1.0 : 0.0;
    y(i) = rec.outcomes(last);
  }

  AncovaResult out;
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() == 3 && n > 3) {
    const Eigen::VectorXd coef = qr.solve(y);
    const double sigma2 = (y - x * coef).squaredNorm() / static_cast<double>(n - 3);
    const Eigen::MatrixXd xtx = x.transpose() * x;
    out.point = coef(2);
    out.variance = sigma2 * xtx.ldlt().solve(Eigen::Vector3d::UnitZ())(2);
    return out;
  }

  // Constant baseline: difference in final means, pooled residual variance.
  out.fallback = true;
  const Eigen::MatrixXd x2 = x(Eigen::all, std::vector<Index>{0, 2});
  const Eigen::VectorXd coef = x2.colPivHouseholderQr().solve(y);
  const double n_active = x.col(2).sum();
  const double n_reference = static_cast<double>(n) - n_active;
  const double sigma2 = (y - x2 * coef).squaredNorm() / static_cast<double>(n - 2);
  out.point = coef(1);
  out.variance = sigma2 * (1.0 / n_active + 1.0 / n_reference);
  return out;
}

PooledEstimate rubins_rules(std::span<const double> points, std::span<const double> variances) {
  if (points.size() != variances.size()) throw InvalidParameter("Rubin's rules: points and variances differ in length");
  if (points.size() < 2) throw InvalidParameter("Rubin's rules need at least two imputations");
  const double m = static_cast<double>(points.size());
  PooledEstimate out;
  out.m = static_cast<int>(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.point += points[i];
    out.within += variances[i];
  }
  out.point /= m;
  out.within /= m;
  for (double q : points) out.between += (q - out.point) * (q - out.point);
  out.between /= m - 1.0;
  out.se = std::sqrt(out.within + (1.0 + 1.0 / m) * out.between);
  out.ci_low = out.point - kZ975 * out.se;
  out.ci_high = out.point + kZ975 * out.se;
  return out;
}

double conditional_mean_estimate(const TrialDataset& data, RbiMethod method, CovarianceStructure structure,
                                 BaselineMean baseline) {
  return analyze_ancova(conditional_mean_impute(data, fit_mle(data, structure, baseline), method)).point;
}

std::vector<JackknifeEstimate> jackknife_se(const TrialDataset& data, std::span<const RbiMethod> methods,
                                            CovarianceStructure structure, BaselineMean baseline) {
  for (Arm arm : kArms)
    if (data.count(arm) < 3) throw InvalidParameter("jackknife needs at least three patients per arm");

  const MleFit full = fit_mle(data, structure, baseline);
  std::vector<double> full_points;
  for (RbiMethod m : methods) full_points.push_back(analyze_ancova(conditional_mean_impute(data, full, m)).point);

  // Leave-one-out estimates for all methods, computed together.
  const std::size_t n = data.size();
  std::vector<std::vector<double>> loo(methods.size(), std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const TrialDataset rest = data.without(i);
    try {
      const MleFit fit = fit_mle(rest, structure, baseline);
      for (std::size_t k = 0; k < methods.size(); ++k)
        loo[k][i] = analyze_ancova(conditional_mean_impute(rest, fit, methods[k])).point;
    } catch (const Error& e) {
      throw EstimationError("jackknife replicate without patient " + data.patients()[i].id + " failed: " + e.what());
    }
  }

  std::vector<JackknifeEstimate> out;
  for (std::size_t k = 0; k < methods.size(); ++k)
    out.push_back(jackknife(n, full_points[k], [&](std::size_t i) { return loo[k][i]; }));
  return out;
}

JackknifeEstimate jackknife_se(const TrialDataset& data, RbiMethod method, CovarianceStructure structure,
                               BaselineMean baseline) {
  const RbiMethod one[] = {method};
  return std::move(jackknife_se(data, std::span<const RbiMethod>(one), structure, baseline).front());
}

PooledEstimate rubin_analysis(const TrialDataset& data, const PosteriorDraws& draws, RbiMethod method, int m, Rng& rng) {
  std::vector<double> points, variances;
  points.reserve(static_cast<std::size_t>(m));
  variances.reserve(static_cast<std::size_t>(m));
  for_each_imputation(data, draws, method, m, rng, [&](const TrialDataset& completed) {
    const AncovaResult fit = analyze_ancova(completed);
    points.push_back(fit.point);
    variances.push_back(fit.variance);
  });
  return rubins_rules(points, variances);
}

}  // namespace refbcm
