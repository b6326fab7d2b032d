#include "refbcm/mmrm.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>

namespace refbcm {

std::string_view to_string(CovarianceStructure s) { return s == CovarianceStructure::shared ? "shared" : "per-arm"; }

CovarianceStructure parse_covariance_structure(std::string_view text) {
  if (text == "shared") return CovarianceStructure::shared;
  if (text == "per-arm" || text == "per_arm") return CovarianceStructure::per_arm;
  throw ParseError("unknown covariance structure '" + std::string(text) + "' (expected shared or per-arm)");
}

std::string_view to_string(BaselineMean b) { return b == BaselineMean::common ? "common" : "per-arm"; }

BaselineMean parse_baseline_mean(std::string_view text) {
  if (text == "common") return BaselineMean::common;
  if (text == "per-arm" || text == "per_arm") return BaselineMean::per_arm;
  throw ParseError("unknown baseline mean '" + std::string(text) + "' (expected common or per-arm)");
}

namespace {

// Outcome rows of one arm, in dataset order.
struct ArmRows {
  Eigen::MatrixXd y;
  Eigen::VectorXi last;
};

ArmRows collect(const TrialDataset& data, Arm arm) {
  const Index n = static_cast<Index>(data.count(arm));
  ArmRows rows{Eigen::MatrixXd(n, data.visits()), Eigen::VectorXi(n)};
  Index i = 0;
  for (const auto& p : data.patients()) {
    if (p.arm != arm) continue;
    rows.y.row(i) = p.outcomes.transpose();
    rows.last(i) = p.last_observed;
    ++i;
  }
  return rows;
}

// Sequential-regression MLE over one or more groups that share slopes and
// residual variances. Returns one mean vector per group and the common
// covariance. A given baseline mean replaces the per-group sample means.
std::pair<std::vector<Eigen::VectorXd>, Eigen::MatrixXd> factorized_mle(const std::vector<const ArmRows*>& groups,
                                                                       Index p,
                                                                       std::optional<double> baseline = std::nullopt) {
  const Index g = static_cast<Index>(groups.size());
  std::vector<Eigen::VectorXd> mu(groups.size(), Eigen::VectorXd::Zero(p));
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(p, p);

  Index n_all = 0;
  double ss0 = 0.0;
  for (Index k = 0; k < g; ++k) {
    const auto& y0 = groups[k]->y.col(0);
    mu[k](0) = baseline ? *baseline : y0.mean();
    ss0 += (y0.array() - mu[k](0)).square().sum();
    n_all += y0.size();
  }
  sigma(0, 0) = ss0 / static_cast<double>(n_all);

  for (Index j = 1; j < p; ++j) {
    const Index n_par = g + j;
    Index n_j = 0;
    for (const auto* grp : groups) n_j += (grp->last.array() >= j).count();
    if (n_j < n_par + 1)
      throw EstimationError("insufficient observations at visit " + std::to_string(j) + " (" + std::to_string(n_j) +
                            " observed, need " + std::to_string(n_par + 1) + ")");

    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n_j, n_par);
    Eigen::VectorXd y(n_j);
    Index r = 0;
    for (Index k = 0; k < g; ++k) {
      const auto& rows = *groups[k];
      for (Index i = 0; i < rows.y.rows(); ++i) {
        if (rows.last(i) < j) continue;
        x(r, k) = 1.0;
        x.row(r).tail(j) = rows.y.row(i).head(j);
        y(r) = rows.y(i, j);
        ++r;
      }
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < n_par)
      throw EstimationError("collinear predictors when regressing visit " + std::to_string(j) + " on earlier visits");
    const Eigen::VectorXd coef = qr.solve(y);
    const double rss = (y - x * coef).squaredNorm();
    const Eigen::VectorXd slope = coef.tail(j);

    for (Index k = 0; k < g; ++k) mu[k](j) = coef(k) + slope.dot(mu[k].head(j));
    const Eigen::VectorXd cross = sigma.topLeftCorner(j, j) * slope;
    sigma.row(j).head(j) = cross.transpose();
    sigma.col(j).head(j) = cross;
    sigma(j, j) = rss / static_cast<double>(n_j) + slope.dot(cross);
  }
  return {std::move(mu), std::move(sigma)};
}

double log_density_prefix(const Eigen::VectorXd& y, const MvnParams<double>& params, Index k) {
  const Eigen::LLT<Eigen::MatrixXd> llt(params.cov.topLeftCorner(k, k));
  const Eigen::VectorXd resid = y.head(k) - params.mean.head(k);
  const Eigen::VectorXd z = llt.matrixL().solve(resid);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(k) * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
}

// Common baseline mean with arm-specific baseline variances: fixed point of
// the precision-weighted mean.
double common_baseline_per_arm(const ArmRows& a, const ArmRows& b) {
  const auto y_a = a.y.col(0).array();
  const auto y_b = b.y.col(0).array();
  double m = (y_a.sum() + y_b.sum()) / static_cast<double>(y_a.size() + y_b.size());
  for (int it = 0; it < 200; ++it) {
    const double v_a = (y_a - m).square().mean();
    const double v_b = (y_b - m).square().mean();
    const double w_a = static_cast<double>(y_a.size()) / v_a;
    const double w_b = static_cast<double>(y_b.size()) / v_b;
    const double next = (w_a * y_a.mean() + w_b * y_b.mean()) / (w_a + w_b);
    const bool done = std::abs(next - m) <= 1e-14 * (1.0 + std::abs(m));
    m = next;
    if (done) break;
  }
  return m;
}

}  // namespace

MvnParams<double> fit_monotone_mle(const TrialDataset& data, Arm arm) {
  const ArmRows rows = collect(data, arm);
  auto [mu, sigma] = factorized_mle({&rows}, data.visits());
  MvnParams<double> out{std::move(mu.front()), std::move(sigma)};
  CheckedCholesky<double>(out.cov).require("monotone MLE covariance");
  return out;
}

MleFit fit_mle(const TrialDataset& data, CovarianceStructure structure, BaselineMean baseline) {
  MleFit fit;
  fit.structure = structure;
  fit.baseline = baseline;
  fit.n_reference = static_cast<int>(data.count(Arm::reference));
  fit.n_active = static_cast<int>(data.count(Arm::active));
  const ArmRows ref = collect(data, Arm::reference);
  const ArmRows act = collect(data, Arm::active);
  if (ref.y.rows() == 0 || act.y.rows() == 0) throw EstimationError("both arms need at least one patient");
  if (structure == CovarianceStructure::per_arm) {
    if (baseline == BaselineMean::per_arm) {
      fit.reference = fit_monotone_mle(data, Arm::reference);
      fit.active = fit_monotone_mle(data, Arm::active);
    } else {
      const double m = common_baseline_per_arm(ref, act);
      for (auto [rows, target] : {std::pair{&ref, &fit.reference}, std::pair{&act, &fit.active}}) {
        auto [mu, sigma] = factorized_mle({rows}, data.visits(), m);
        CheckedCholesky<double>(sigma).require("monotone MLE covariance");
        *target = {std::move(mu.front()), std::move(sigma)};
      }
    }
  } else {
    std::optional<double> m;
    if (baseline == BaselineMean::common)
      m = (ref.y.col(0).sum() + act.y.col(0).sum()) / static_cast<double>(ref.y.rows() + act.y.rows());
    auto [mu, sigma] = factorized_mle({&ref, &act}, data.visits(), m);
    CheckedCholesky<double>(sigma).require("pooled monotone MLE covariance");
    fit.reference = {mu[0], sigma};
    fit.active = {mu[1], sigma};
  }
  fit.log_likelihood = observed_log_likelihood(data, fit.reference, fit.active);
  return fit;
}

double observed_log_likelihood(const TrialDataset& data, const MvnParams<double>& reference,
                               const MvnParams<double>& active) {
  double ll = 0.0;
  for (const auto& p : data.patients()) {
    const auto& params = p.arm == Arm::active ? active : reference;
    ll += log_density_prefix(p.outcomes, params, p.last_observed + 1);
  }
  return ll;
}

void GibbsConfig::validate() const {
  if (n_burn < 0 || n_total <= n_burn) throw InvalidParameter("Gibbs config requires n_total > n_burn >= 0");
  if (thin < 1) throw InvalidParameter("Gibbs config requires thin >= 1");
  if (!(iw_df_offset > 1.0)) throw InvalidParameter("inverse-Wishart df offset must exceed 1");
  if (kept() < 1) throw InvalidParameter("Gibbs config keeps no draws");
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_inverse_wishart(double df, const Eigen::MatrixXd& scale, Rng& rng) {
  const Index p = scale.rows();
  if (!(df > static_cast<double>(p - 1))) throw InvalidParameter("inverse-Wishart df must exceed dim - 1");
  CheckedCholesky<double> chol(scale);
  chol.require("inverse-Wishart scale");
  const Eigen::MatrixXd m = chol.matrixL();

  // Bartlett factor of W(df, I).
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(2.0 * rng.gamma(0.5 * (df - static_cast<double>(i))));
    for (Index k = 0; k < i; ++k) a(i, k) = rng.normal();
  }
  // Sigma = M A^{-T} A^{-1} M^T, so F = M A^{-T}.
  const Eigen::MatrixXd f_t = a.triangularView<Eigen::Lower>().solve(m.transpose());
  Eigen::MatrixXd f = f_t.transpose();
  Eigen::MatrixXd sigma = f * f.transpose();
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  return {std::move(sigma), std::move(f)};
}

namespace {

struct PatternBlock {
  int last = 0;                // D
  Eigen::MatrixXd rows;        // n_D x p, trailing columns imputed in place
};

struct ArmChain {
  Arm arm = Arm::reference;
  Index n = 0;
  Index completers = 0;
  Eigen::VectorXd completer_sum;
  Eigen::MatrixXd completer_cross;
  std::vector<PatternBlock> dropouts;
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd sigma_factor;
  Eigen::VectorXd sum;
  Eigen::MatrixXd cross;
  Eigen::VectorXd running;

  ArmChain(const ArmRows& rows, Arm a, Index p) : arm(a), n(rows.y.rows()) {
    completer_sum = Eigen::VectorXd::Zero(p);
    completer_cross = Eigen::MatrixXd::Zero(p, p);
    running = Eigen::VectorXd::Zero(p);
    for (int d = 0; d < p - 1; ++d) {
      const Index n_d = (rows.last.array() == d).count();
      if (n_d == 0) continue;
      PatternBlock block{d, Eigen::MatrixXd(n_d, p)};
      Index r = 0;
      for (Index i = 0; i < rows.y.rows(); ++i)
        if (rows.last(i) == d) block.rows.row(r++) = rows.y.row(i);
      dropouts.push_back(std::move(block));
    }
    for (Index i = 0; i < rows.y.rows(); ++i) {
      if (rows.last(i) != p - 1) continue;
      ++completers;
      completer_sum += rows.y.row(i).transpose();
      completer_cross.noalias() += rows.y.row(i).transpose() * rows.y.row(i);
    }
  }

  void augment(Rng& rng) {
    const Index p = mu.size();
    for (auto& block : dropouts) {
      const Index k = block.last + 1;
      const auto cond = condition_on_leading<double>(sigma, k);
      Eigen::VectorXd z(p - k);
      for (Index i = 0; i < block.rows.rows(); ++i) {
        for (Index t = 0; t < z.size(); ++t) z(t) = rng.normal();
        const Eigen::VectorXd lead = block.rows.row(i).head(k).transpose();
        block.rows.row(i).tail(p - k) =
            (cond.mean(mu, lead) + cond.cov_factor.triangularView<Eigen::Lower>() * z).transpose();
      }
    }
    sum = completer_sum;
    cross = completer_cross;
    for (const auto& block : dropouts) {
      sum += block.rows.colwise().sum().transpose();
      cross.noalias() += block.rows.transpose() * block.rows;
    }
  }

  Eigen::MatrixXd scatter() const {
    Eigen::MatrixXd s = cross - sum * mu.transpose() - mu * sum.transpose() + static_cast<double>(n) * mu * mu.transpose();
    return 0.5 * (s + s.transpose());
  }

  void draw_mean(Rng& rng) {
    const Index p = mu.size();
    Eigen::VectorXd z(p);
    for (Index t = 0; t < p; ++t) z(t) = rng.normal();
    mu = sum / static_cast<double>(n) + sigma_factor * z / std::sqrt(static_cast<double>(n));
    if ((mu.array().abs() > 1e6).any() || !mu.allFinite())
      throw EstimationError("Gibbs chain diverged: |mean| exceeded 1e6 in the " + std::string(to_string(arm)) + " arm");
  }
};

// Conditions independent mean draws on equal baseline means. Shifting each
// draw by its regression on the baseline difference gives an exact draw from
// the constrained conditional.
void equalize_baselines(ArmChain& ref, ArmChain& act) {
  const double d = act.mu(0) - ref.mu(0);
  const Eigen::VectorXd c_act = act.sigma.col(0) / static_cast<double>(act.n);
  const Eigen::VectorXd c_ref = ref.sigma.col(0) / static_cast<double>(ref.n);
  const double v = c_act(0) + c_ref(0);
  act.mu -= c_act * (d / v);
  ref.mu += c_ref * (d / v);
  act.mu(0) = ref.mu(0);
}

// ML covariance of completers (pooled within arms for the shared structure),
// falling back to the monotone MLE when completers cannot support it.
Eigen::MatrixXd completer_covariance(const std::vector<const ArmChain*>& chains, const Eigen::MatrixXd& fallback) {
  const Index p = fallback.rows();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
  Index n_c = 0;
  for (const auto* c : chains) {
    const Index nc = c->completers;
    if (nc == 0) continue;
    const Eigen::VectorXd mean = c->completer_sum / static_cast<double>(nc);
    s += c->completer_cross - static_cast<double>(nc) * mean * mean.transpose();
    n_c += nc;
  }
  if (n_c <= p + static_cast<Index>(chains.size())) return fallback;
  s /= static_cast<double>(n_c);
  s = 0.5 * (s + s.transpose()).eval();
  if (!CheckedCholesky<double>(s).ok()) return fallback;
  return s;
}

}  // namespace

PosteriorDraws gibbs_sample(const TrialDataset& data, const GibbsConfig& config) {
  config.validate();
  const Index p = data.visits();
  const MleFit start = fit_mle(data, config.structure, config.baseline);

  const ArmRows ref_rows = collect(data, Arm::reference);
  const ArmRows act_rows = collect(data, Arm::active);
  ArmChain ref(ref_rows, Arm::reference, p);
  ArmChain act(act_rows, Arm::active, p);
  std::array<ArmChain*, 2> chains{&ref, &act};
  ref.mu = start.reference.mean;
  ref.sigma = start.reference.cov;
  act.mu = start.active.mean;
  act.sigma = start.active.cov;

  const double prior_df = static_cast<double>(p) + config.iw_df_offset;
  const double prior_scale_factor = config.iw_df_offset - 1.0;
  Eigen::MatrixXd prior_shared, prior_ref, prior_act;
  if (config.structure == CovarianceStructure::shared) {
    prior_shared = prior_scale_factor * completer_covariance({&ref, &act}, start.reference.cov);
  } else {
    prior_ref = prior_scale_factor * completer_covariance({&ref}, start.reference.cov);
    prior_act = prior_scale_factor * completer_covariance({&act}, start.active.cov);
  }

  PosteriorDraws out;
  out.config = config;
  out.draws.reserve(static_cast<std::size_t>(config.kept()));
  Rng rng(config.seed, 0x6962627300ULL);

  for (int it = 0; it < config.n_total; ++it) {
    for (auto* c : chains) c->augment(rng);

    if (config.structure == CovarianceStructure::shared) {
      const Eigen::MatrixXd scale = prior_shared + ref.scatter() + act.scatter();
      auto [sigma, factor] = sample_inverse_wishart(prior_df + static_cast<double>(ref.n + act.n), scale, rng);
      CheckedCholesky<double>(sigma).require("Gibbs covariance draw");
      ref.sigma = act.sigma = sigma;
      ref.sigma_factor = act.sigma_factor = factor;
    } else {
      for (auto* c : chains) {
        const Eigen::MatrixXd& prior = c->arm == Arm::active ? prior_act : prior_ref;
        auto [sigma, factor] = sample_inverse_wishart(prior_df + static_cast<double>(c->n), prior + c->scatter(), rng);
        CheckedCholesky<double>(sigma).require("Gibbs covariance draw");
        c->sigma = std::move(sigma);
        c->sigma_factor = std::move(factor);
      }
    }
    for (auto* c : chains) c->draw_mean(rng);
    if (config.baseline == BaselineMean::common) equalize_baselines(ref, act);

    if (it >= config.n_burn && (it - config.n_burn + 1) % config.thin == 0) {
      out.draws.push_back({{ref.mu, ref.sigma}, {act.mu, act.sigma}});
      ref.running += ref.mu;
      act.running += act.mu;
    }
  }
  const double kept = static_cast<double>(out.draws.size());
  out.running_mean_reference = ref.running / kept;
  out.running_mean_active = act.running / kept;
  return out;
}

void write_draws_csv(std::ostream& out, const PosteriorDraws& draws) {
  out << "draw,arm,param,visit_i,visit_j,value\n";
  out.precision(17);
  for (std::size_t l = 0; l < draws.draws.size(); ++l) {
    for (Arm arm : kArms) {
      const auto& params = draws.draws[l].arm(arm);
      for (Index i = 0; i < params.dim(); ++i)
        out << l << ',' << to_string(arm) << ",mean," << i << ",," << params.mean(i) << '\n';
      for (Index i = 0; i < params.dim(); ++i)
        for (Index j = i; j < params.dim(); ++j)
          out << l << ',' << to_string(arm) << ",cov," << i << ',' << j << ',' << params.cov(i, j) << '\n';
    }
  }
}

}  // namespace refbcm
