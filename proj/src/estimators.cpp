#include "piie/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "piie/inference.hpp"

namespace piie {

namespace {

// Log of the smallest admissible denominator density.
const double kLogDensityFloor = std::log(1e-300);

Eigen::VectorXd to_vector(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd expit_all(const Eigen::VectorXd& eta) {
  return eta.unaryExpr([](double e) { return expit(e); });
}

void check_columns(const FormulaSpec& spec, const Dataset& data) {
  if (!data.has_column(spec.response)) {
    throw Error(ErrorCode::unknown_column, "unknown column '" + spec.response + "' in '" + spec.render() + "'");
  }
  for (const auto& term : spec.terms) {
    for (const auto& f : term.factors) {
      if (!data.has_column(f)) {
        throw Error(ErrorCode::unknown_column, "unknown column '" + f + "' in '" + spec.render() + "'");
      }
    }
  }
}

void forbid(const FormulaSpec& spec, const std::string& column, const char* model) {
  for (const auto& term : spec.terms) {
    if (term.involves(column)) {
      throw Error(ErrorCode::unsupported_model,
                  std::string(model) + " model may not use '" + column + "' as a regressor");
    }
  }
}

Eigen::MatrixXd evaluate_rows(const RowEvaluator& eval, std::size_t n, std::optional<double> exposure,
                              std::optional<double> mediator) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(eval.size()));
  Eigen::VectorXd row(static_cast<Eigen::Index>(eval.size()));
  for (std::size_t i = 0; i < n; ++i) {
    eval.row(i, row, exposure, mediator);
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

bool affine_in(const FormulaSpec& spec, const std::string& column) {
  return std::all_of(spec.terms.begin(), spec.terms.end(),
                     [&](const Term& t) { return t.degree_in(column) <= 1; });
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::mle: return "mle";
    case Method::mle_alt: return "mle_alt";
    case Method::sp1: return "sp1";
    case Method::sp2: return "sp2";
    case Method::dr: return "dr";
    case Method::closed_form: return "closed_form";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::mle, Method::mle_alt, Method::sp1, Method::sp2, Method::dr, Method::closed_form}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::invalid_argument, "unknown method '" + std::string(name) + "'");
}

std::string_view to_string(VarianceMethod method) {
  switch (method) {
    case VarianceMethod::sandwich: return "sandwich";
    case VarianceMethod::bootstrap: return "bootstrap";
    case VarianceMethod::closed_form: return "closed_form";
  }
  return "unknown";
}

VarianceMethod parse_variance_method(std::string_view name) {
  for (auto m : {VarianceMethod::sandwich, VarianceMethod::bootstrap, VarianceMethod::closed_form}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::invalid_argument, "unknown variance method '" + std::string(name) + "'");
}

ModelNeeds needs_of(Method method) {
  switch (method) {
    case Method::mle: return {true, true, true};
    case Method::mle_alt: return {true, true, false};
    case Method::sp1: return {false, true, false};
    case Method::sp2: return {true, false, true};
    case Method::dr: return {true, true, true};
    case Method::closed_form: return {true, true, false};
  }
  return {};
}

void validate_config(const EstimationConfig& config, const Dataset& data, ModelNeeds needs) {
  if (config.a_star != 0 && config.a_star != 1) {
    throw Error(ErrorCode::invalid_argument, "a_star must be 0 or 1");
  }
  if (!(config.propensity_floor > 0.0 && config.propensity_floor < 0.5)) {
    throw Error(ErrorCode::invalid_argument, "propensity floor must lie in (0, 0.5)");
  }
  const auto& roles = data.roles();
  auto check = [&](const std::optional<FormulaSpec>& f, bool needed, const char* model, const std::string& response) {
    if (!f) {
      if (needed) {
        throw Error(ErrorCode::invalid_argument, std::string("method '") + std::string(to_string(config.method)) +
                                                     "' requires a " + model + " model");
      }
      return false;
    }
    if (f->response != response) {
      throw Error(ErrorCode::invalid_argument, std::string(model) + " model response must be '" + response +
                                                   "', got '" + f->response + "'");
    }
    check_columns(*f, data);
    return true;
  };
  if (check(config.outcome_formula, needs.outcome, "outcome", roles.outcome)) {
    forbid(*config.outcome_formula, roles.outcome, "outcome");
  }
  if (check(config.mediator_formula, needs.mediator, "mediator", roles.mediator)) {
    forbid(*config.mediator_formula, roles.mediator, "mediator");
    forbid(*config.mediator_formula, roles.outcome, "mediator");
  }
  if (check(config.propensity_formula, needs.propensity, "propensity", roles.exposure)) {
    forbid(*config.propensity_formula, roles.exposure, "propensity");
    forbid(*config.propensity_formula, roles.mediator, "propensity");
    forbid(*config.propensity_formula, roles.outcome, "propensity");
  }
  if (config.mediator_family == MediatorFamily::bernoulli && !is_binary(data.mediator())) {
    throw Error(ErrorCode::unsupported_model, "bernoulli mediator family requires a 0/1 mediator");
  }
}

std::vector<std::string> NuisanceSet::warnings() const {
  std::vector<std::string> out;
  if (mediator) {
    if (const auto* lf = std::get_if<LogisticFit>(&mediator->fit)) {
      out.insert(out.end(), lf->warnings.begin(), lf->warnings.end());
    }
  }
  if (propensity) out.insert(out.end(), propensity->warnings.begin(), propensity->warnings.end());
  return out;
}

NuisanceSet fit_nuisances(const Dataset& data, const EstimationConfig& config, ModelNeeds needs) {
  data.require_estimable();
  validate_config(config, data, needs);
  NuisanceSet set;
  if (needs.outcome) {
    const auto design = build_design(*config.outcome_formula, data);
    set.outcome = fit_linear(design, data.outcome());
  }
  if (needs.mediator) {
    const auto design = build_design(*config.mediator_formula, data);
    const auto family = config.mediator_family.value_or(infer_family(data.mediator()));
    set.mediator = fit_mediator(design, data.mediator(), family);
  }
  if (needs.propensity) {
    const auto design = build_design(*config.propensity_formula, data);
    set.propensity = fit_logistic(design, data.exposure());
  }
  return set;
}

NuisanceParams params_of(const NuisanceSet& nuisance) {
  NuisanceParams p;
  if (nuisance.outcome) p.theta = nuisance.outcome->coef;
  if (nuisance.mediator) {
    p.beta = nuisance.mediator->coef();
    p.sigma2_z = nuisance.mediator->sigma2();
  }
  if (nuisance.propensity) p.alpha = nuisance.propensity->coef;
  return p;
}

// ---------------------------------------------------------------------------
// PsiEvaluator

PsiEvaluator::PsiEvaluator(const Dataset& data, const NuisanceSet& nuisance, const EstimationConfig& config)
    : n_(data.rows()),
      a_star_(config.a_star),
      floor_(config.propensity_floor),
      policy_(config.positivity),
      has_outcome_(nuisance.outcome.has_value()),
      has_mediator_(nuisance.mediator.has_value()),
      has_propensity_(nuisance.propensity.has_value()),
      y_(to_vector(data.outcome())),
      a_(to_vector(data.exposure())),
      z_(to_vector(data.mediator())) {
  const auto& roles = data.roles();
  if (has_mediator_) {
    family_ = nuisance.mediator->family;
    const RowEvaluator eval(nuisance.mediator->spec(), data);
    mediator_design_ = build_design(nuisance.mediator->spec(), data).X;
    mediator_at_[0] = evaluate_rows(eval, n_, 0.0, std::nullopt);
    mediator_at_[1] = evaluate_rows(eval, n_, 1.0, std::nullopt);
  } else {
    family_ = config.mediator_family.value_or(infer_family(data.mediator()));
  }
  if (has_outcome_) {
    const auto& spec = nuisance.outcome->spec;
    outcome_affine_in_z_ = family_ == MediatorFamily::bernoulli || affine_in(spec, roles.mediator);
    const RowEvaluator eval(spec, data);
    outcome_design_ = build_design(spec, data).X;
    for (int a = 0; a < 2; ++a) {
      outcome_base_[a] = evaluate_rows(eval, n_, a, 0.0);
      outcome_slope_[a] = evaluate_rows(eval, n_, a, 1.0) - outcome_base_[a];
      outcome_at_z_[a] = evaluate_rows(eval, n_, a, std::nullopt);
    }
  }
  if (has_propensity_) propensity_design_ = build_design(nuisance.propensity->spec, data).X;
}

void PsiEvaluator::require_integrable() const {
  if (!outcome_affine_in_z_) {
    throw Error(ErrorCode::unsupported_model,
                "gaussian mediator requires an outcome model linear in the mediator "
                "(no term may contain the mediator twice)");
  }
}

PsiEvaluator::MediatorTerms PsiEvaluator::mediator_terms(const NuisanceParams& params, bool with_ratio) const {
  MediatorTerms t;
  const Eigen::VectorXd eta_star = mediator_at_[a_star_] * params.beta;
  const Eigen::VectorXd eta_obs = mediator_design_ * params.beta;
  const bool bernoulli = family_ == MediatorFamily::bernoulli;
  t.mean_star = bernoulli ? expit_all(eta_star) : eta_star;
  t.mean_observed = bernoulli ? expit_all(eta_obs) : eta_obs;
  if (!with_ratio) return t;

  t.ratio.resize(static_cast<Eigen::Index>(n_));
  if (bernoulli) {
    for (Eigen::Index i = 0; i < t.ratio.size(); ++i) {
      const bool one = z_[i] == 1.0;
      const double num = one ? t.mean_star[i] : 1.0 - t.mean_star[i];
      const double den = one ? t.mean_observed[i] : 1.0 - t.mean_observed[i];
      if (!(den >= 1e-300)) {
        throw Error(ErrorCode::positivity, "mediator density is numerically zero at row " + std::to_string(i));
      }
      t.ratio[i] = num / den;
    }
    return t;
  }
  const double s2 = params.sigma2_z;
  if (!(s2 > 0.0)) {
    throw Error(ErrorCode::degenerate_density, "gaussian mediator model has zero residual variance");
  }
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * s2);
  for (Eigen::Index i = 0; i < t.ratio.size(); ++i) {
    const double d_obs = z_[i] - t.mean_observed[i];
    const double d_star = z_[i] - t.mean_star[i];
    if (log_norm - 0.5 * d_obs * d_obs / s2 < kLogDensityFloor) {
      throw Error(ErrorCode::positivity, "mediator density is numerically zero at row " + std::to_string(i));
    }
    t.ratio[i] = std::exp(0.5 * (d_obs * d_obs - d_star * d_star) / s2);
  }
  return t;
}

Eigen::VectorXd PsiEvaluator::treated_probability(const NuisanceParams& params) const {
  return expit_all(propensity_design_ * params.alpha);
}

Eigen::VectorXd PsiEvaluator::inverse_weight(const Eigen::VectorXd& p1, std::size_t* truncated) const {
  Eigen::VectorXd w(p1.size());
  std::size_t clamped = 0;
  for (Eigen::Index i = 0; i < p1.size(); ++i) {
    double p_star = a_star_ == 1 ? p1[i] : 1.0 - p1[i];
    if (p_star < floor_) {
      if (policy_ == PositivityPolicy::error) {
        throw Error(ErrorCode::positivity, "fitted Pr(A = a* | C) is " + std::to_string(p_star) + " at row " +
                                               std::to_string(i) + ", below the floor " + std::to_string(floor_));
      }
      p_star = floor_;
      ++clamped;
    }
    w[i] = a_[i] == a_star_ ? 1.0 / p_star : 0.0;
  }
  if (truncated) *truncated = clamped;
  return w;
}

Eigen::VectorXd PsiEvaluator::summands(Method method, const NuisanceParams& params, std::size_t* truncated) const {
  const auto needs = needs_of(method);
  if ((needs.outcome && !has_outcome_) || (needs.mediator && !has_mediator_) ||
      (needs.propensity && !has_propensity_)) {
    throw Error(ErrorCode::invalid_argument,
                "nuisance models missing for method '" + std::string(to_string(method)) + "'");
  }
  if (truncated) *truncated = 0;
  const auto n = static_cast<Eigen::Index>(n_);

  Eigen::VectorXd g0[2], g1[2];
  if (needs.outcome) {
    for (int a = 0; a < 2; ++a) {
      g0[a] = outcome_base_[a] * params.theta;
      g1[a] = outcome_slope_[a] * params.theta;
    }
  }
  // sum_z E(Y | A_i, z, C_i) f(z | a*, C_i)
  auto plug_in_at_observed = [&](const MediatorTerms& m) {
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = a_[i] == 1.0 ? 1 : 0;
      s[i] = g0[a][i] + m.mean_star[i] * g1[a][i];
    }
    return s;
  };

  switch (method) {
    case Method::mle_alt:
    case Method::closed_form: {
      require_integrable();
      return plug_in_at_observed(mediator_terms(params, false));
    }
    case Method::mle: {
      require_integrable();
      const auto m = mediator_terms(params, false);
      const Eigen::VectorXd p1 = treated_probability(params);
      return (g0[0] + m.mean_star.cwiseProduct(g1[0])).cwiseProduct((1.0 - p1.array()).matrix()) +
             (g0[1] + m.mean_star.cwiseProduct(g1[1])).cwiseProduct(p1);
    }
    case Method::sp1: {
      const auto m = mediator_terms(params, true);
      return y_.cwiseProduct(m.ratio);
    }
    case Method::sp2: {
      const Eigen::VectorXd p1 = treated_probability(params);
      const Eigen::VectorXd w = inverse_weight(p1, truncated);
      const Eigen::VectorXd inner = (outcome_at_z_[0] * params.theta).cwiseProduct((1.0 - p1.array()).matrix()) +
                                    (outcome_at_z_[1] * params.theta).cwiseProduct(p1);
      return w.cwiseProduct(inner);
    }
    case Method::dr: {
      require_integrable();
      const auto m = mediator_terms(params, true);
      const Eigen::VectorXd p1 = treated_probability(params);
      const Eigen::VectorXd p0 = (1.0 - p1.array()).matrix();
      const Eigen::VectorXd w = inverse_weight(p1, truncated);
      const Eigen::VectorXd resid = y_ - outcome_design_ * params.theta;
      const Eigen::VectorXd term1 = resid.cwiseProduct(m.ratio);
      const Eigen::VectorXd at_z =
          (outcome_at_z_[0] * params.theta).cwiseProduct(p0) + (outcome_at_z_[1] * params.theta).cwiseProduct(p1);
      const Eigen::VectorXd integrated = (g0[0] + m.mean_observed.cwiseProduct(g1[0])).cwiseProduct(p0) +
                                         (g0[1] + m.mean_observed.cwiseProduct(g1[1])).cwiseProduct(p1);
      const Eigen::VectorXd term2 = w.cwiseProduct(at_z - integrated);
      return term1 + term2 + plug_in_at_observed(m);
    }
  }
  return Eigen::VectorXd::Zero(n);
}

Eigen::MatrixXd PsiEvaluator::outcome_scores(const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd resid = y_ - outcome_design_ * theta;
  return outcome_design_.array().colwise() * resid.array();
}

Eigen::MatrixXd PsiEvaluator::mediator_scores(const Eigen::VectorXd& beta) const {
  Eigen::VectorXd fitted = mediator_design_ * beta;
  if (family_ == MediatorFamily::bernoulli) fitted = expit_all(fitted);
  const Eigen::VectorXd resid = z_ - fitted;
  return mediator_design_.array().colwise() * resid.array();
}

Eigen::VectorXd PsiEvaluator::mediator_variance_scores(const Eigen::VectorXd& beta, double sigma2_z) const {
  const Eigen::VectorXd resid = z_ - mediator_design_ * beta;
  return (resid.array().square() - sigma2_z).matrix();
}

Eigen::MatrixXd PsiEvaluator::propensity_scores(const Eigen::VectorXd& alpha) const {
  const Eigen::VectorXd resid = a_ - expit_all(propensity_design_ * alpha);
  return propensity_design_.array().colwise() * resid.array();
}

// ---------------------------------------------------------------------------

double integrate_over_mediator(const NuisanceSet& nuisance, const Dataset& data, std::size_t i, double a_eval,
                               double a_cond) {
  if (!nuisance.outcome || !nuisance.mediator) {
    throw Error(ErrorCode::invalid_argument, "integration needs outcome and mediator models");
  }
  const auto& outcome = *nuisance.outcome;
  const auto& mediator = *nuisance.mediator;
  const RowEvaluator med_rows(mediator.spec(), data);
  const RowEvaluator out_rows(outcome.spec, data);
  const double mean = mediator.mean(med_rows.row(i, a_cond));
  if (mediator.family == MediatorFamily::bernoulli) {
    const double m1 = out_rows.row(i, a_eval, 1.0).dot(outcome.coef);
    const double m0 = out_rows.row(i, a_eval, 0.0).dot(outcome.coef);
    return mean * m1 + (1.0 - mean) * m0;
  }
  if (!affine_in(outcome.spec, data.roles().mediator)) {
    throw Error(ErrorCode::unsupported_model,
                "gaussian mediator requires an outcome model linear in the mediator");
  }
  return out_rows.row(i, a_eval, mean).dot(outcome.coef);
}

PsiEstimate estimate_psi(const Dataset& data, const EstimationConfig& config) {
  const auto nuisance = fit_nuisances(data, config, needs_of(config.method));
  return estimate_psi(data, config, nuisance);
}

PsiEstimate estimate_psi(const Dataset& data, const EstimationConfig& config, const NuisanceSet& nuisance) {
  PsiEstimate est;
  est.method = config.method;
  est.nuisance = nuisance;
  const PsiEvaluator evaluator(data, nuisance, config);
  const auto params = params_of(nuisance);
  est.contributions = evaluator.summands(config.method, params, &est.truncated);
  if (config.method == Method::closed_form) {
    const auto theta = outcome_coefficients(*nuisance.outcome, data.roles());
    const auto beta = mediator_coefficients(*nuisance.mediator, data.roles());
    est.psi = closed_form_psi(theta, beta, config.a_star, closed_form_moments(theta, beta, data));
  } else {
    est.psi = est.contributions.mean();
  }
  est.warnings = nuisance.warnings();
  if (est.truncated > 0) {
    est.warnings.push_back(std::to_string(est.truncated) + " propensity values truncated at the floor");
  }
  return est;
}

namespace {
PsiEstimate estimate_with(const Dataset& data, EstimationConfig config, Method method) {
  config.method = method;
  return estimate_psi(data, config);
}
}  // namespace

PsiEstimate estimate_psi_mle(const Dataset& data, const EstimationConfig& config) {
  return estimate_with(data, config, Method::mle);
}
PsiEstimate estimate_psi_mle_alt(const Dataset& data, const EstimationConfig& config) {
  return estimate_with(data, config, Method::mle_alt);
}
PsiEstimate estimate_psi_sp1(const Dataset& data, const EstimationConfig& config) {
  return estimate_with(data, config, Method::sp1);
}
PsiEstimate estimate_psi_sp2(const Dataset& data, const EstimationConfig& config) {
  return estimate_with(data, config, Method::sp2);
}
PsiEstimate estimate_psi_dr(const Dataset& data, const EstimationConfig& config) {
  return estimate_with(data, config, Method::dr);
}

Eigen::VectorXd eif_contributions(const NuisanceSet& nuisance, const Dataset& data, int a_star, double psi_ref) {
  EstimationConfig config;
  config.a_star = a_star;
  config.method = Method::dr;
  if (nuisance.mediator) config.mediator_family = nuisance.mediator->family;
  const PsiEvaluator evaluator(data, nuisance, config);
  return (evaluator.summands(Method::dr, params_of(nuisance)).array() - psi_ref).matrix();
}

// ---------------------------------------------------------------------------
// Closed form

OutcomeCoefficients outcome_coefficients(const LinearFit& fit, const Roles& roles) {
  OutcomeCoefficients out;
  std::vector<double> cov;
  Eigen::Index k = 0;
  if (fit.spec.intercept) out.intercept = fit.coef[k++];
  const Term a_term{{roles.exposure}};
  const Term z_term{{roles.mediator}};
  Term az_term{{roles.exposure, roles.mediator}};
  std::sort(az_term.factors.begin(), az_term.factors.end());
  for (const auto& term : fit.spec.terms) {
    const double c = fit.coef[k++];
    if (term == a_term) {
      out.a = c;
    } else if (term == z_term) {
      out.z = c;
    } else if (term == az_term) {
      out.az = c;
    } else if (term.involves(roles.exposure) || term.involves(roles.mediator)) {
      throw Error(ErrorCode::unsupported_model,
                  "closed form needs an outcome model in a, z, a:z and covariates; found '" + term.name() + "'");
    } else {
      out.covariate_terms.push_back(term);
      cov.push_back(c);
    }
  }
  out.covariates = Eigen::Map<Eigen::VectorXd>(cov.data(), static_cast<Eigen::Index>(cov.size()));
  return out;
}

MediatorCoefficients mediator_coefficients(const MediatorModel& model, const Roles& roles) {
  if (model.family != MediatorFamily::gaussian) {
    throw Error(ErrorCode::unsupported_model, "closed form needs a gaussian linear mediator model");
  }
  MediatorCoefficients out;
  std::vector<double> cov;
  const auto& spec = model.spec();
  const auto& coef = model.coef();
  Eigen::Index k = 0;
  if (spec.intercept) out.intercept = coef[k++];
  const Term a_term{{roles.exposure}};
  for (const auto& term : spec.terms) {
    const double c = coef[k++];
    if (term == a_term) {
      out.a = c;
    } else if (term.involves(roles.exposure)) {
      throw Error(ErrorCode::unsupported_model,
                  "closed form needs a mediator model in a and covariates; found '" + term.name() + "'");
    } else {
      out.covariate_terms.push_back(term);
      cov.push_back(c);
    }
  }
  out.covariates = Eigen::Map<Eigen::VectorXd>(cov.data(), static_cast<Eigen::Index>(cov.size()));
  return out;
}

ClosedFormMoments closed_form_moments(const OutcomeCoefficients& theta, const MediatorCoefficients& beta,
                                      const Dataset& data) {
  const std::size_t n = data.rows();
  const auto a = data.exposure();
  auto feature = [&](const Term& term) {
    std::vector<double> v(n, 1.0);
    for (const auto& f : term.factors) {
      const auto col = data.column(f);
      for (std::size_t i = 0; i < n; ++i) v[i] *= col[i];
    }
    return v;
  };
  auto mean = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(n);
  };
  ClosedFormMoments m;
  m.mean_a = mean(std::vector<double>(a.begin(), a.end()));
  m.mean_c_outcome.resize(static_cast<Eigen::Index>(theta.covariate_terms.size()));
  for (std::size_t k = 0; k < theta.covariate_terms.size(); ++k) {
    m.mean_c_outcome[static_cast<Eigen::Index>(k)] = mean(feature(theta.covariate_terms[k]));
  }
  const auto p = static_cast<Eigen::Index>(beta.covariate_terms.size());
  m.mean_c_mediator.resize(p);
  m.mean_a_c_mediator.resize(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    auto v = feature(beta.covariate_terms[static_cast<std::size_t>(k)]);
    m.mean_c_mediator[k] = mean(v);
    for (std::size_t i = 0; i < n; ++i) v[i] *= a[i];
    m.mean_a_c_mediator[k] = mean(v);
  }
  return m;
}

double closed_form_psi(const OutcomeCoefficients& theta, const MediatorCoefficients& beta, int a_star,
                       const ClosedFormMoments& m) {
  if (m.mean_c_outcome.size() != theta.covariates.size() || m.mean_c_mediator.size() != beta.covariates.size() ||
      m.mean_a_c_mediator.size() != beta.covariates.size()) {
    throw Error(ErrorCode::dimension_mismatch, "closed-form moments do not match the coefficients");
  }
  const double as = a_star;
  return theta.intercept + theta.z * beta.intercept + theta.z * beta.a * as +
         (theta.a + theta.az * beta.intercept + theta.az * beta.a * as) * m.mean_a +
         theta.z * beta.covariates.dot(m.mean_c_mediator) + theta.covariates.dot(m.mean_c_outcome) +
         theta.az * beta.covariates.dot(m.mean_a_c_mediator);
}

ExposureMoments exposure_moments(const Dataset& data) {
  const auto a = data.exposure();
  ExposureMoments m;
  m.n = a.size();
  if (m.n < 2) throw Error(ErrorCode::empty_dataset, "need at least 2 rows for exposure moments");
  const double n = static_cast<double>(m.n);
  for (double v : a) {
    m.mean_a += v / n;
    m.mean_a2 += v * v / n;
  }
  for (double v : a) {
    const double d1 = v - m.mean_a;
    const double d2 = v * v - m.mean_a2;
    m.var_a += d1 * d1 / (n - 1.0);
    m.var_a2 += d2 * d2 / (n - 1.0);
    m.cov_a_a2 += d1 * d2 / (n - 1.0);
  }
  return m;
}

Eigen::Matrix3d closed_form_param_cov(const LinearFit& outcome, const MediatorModel& mediator, const Roles& roles) {
  outcome_coefficients(outcome, roles);  // shape checks
  mediator_coefficients(mediator, roles);
  auto index_of = [](const FormulaSpec& spec, Term term) -> std::optional<Eigen::Index> {
    std::sort(term.factors.begin(), term.factors.end());
    for (std::size_t k = 0; k < spec.terms.size(); ++k) {
      if (spec.terms[k] == term) return static_cast<Eigen::Index>(k + (spec.intercept ? 1 : 0));
    }
    return std::nullopt;
  };
  const auto& med = std::get<LinearFit>(mediator.fit);
  const auto ia = index_of(med.spec, Term{{roles.exposure}});
  const auto iz = index_of(outcome.spec, Term{{roles.mediator}});
  const auto iaz = index_of(outcome.spec, Term{{roles.exposure, roles.mediator}});

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  if (ia) cov(0, 0) = med.sigma2 * med.xtx_inv(*ia, *ia);
  const std::optional<Eigen::Index> idx[2] = {iz, iaz};
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      if (idx[r] && idx[c]) cov(r + 1, c + 1) = outcome.sigma2 * outcome.xtx_inv(*idx[r], *idx[c]);
    }
  }
  return cov;
}

double closed_form_piie_variance(double beta_a, double theta_z, double theta_az, const Eigen::Matrix3d& param_cov,
                                 const ExposureMoments& m) {
  if (m.n < 2) throw Error(ErrorCode::invalid_argument, "exposure moments need n >= 2");
  if (std::abs(m.mean_a - m.mean_a2) > 1e-12 || std::abs(m.var_a - m.var_a2) > 1e-12) {
    throw Error(ErrorCode::unsupported_model, "closed-form variance requires a binary exposure");
  }
  const Eigen::Vector3d grad(m.mean_a * theta_z + m.mean_a2 * theta_az, m.mean_a * beta_a, m.mean_a2 * beta_a);
  const Eigen::Vector2d moment_grad(beta_a * theta_z, beta_a * theta_az);
  Eigen::Matrix2d moment_cov;
  moment_cov << m.var_a, m.cov_a_a2, m.cov_a_a2, m.var_a2;
  moment_cov /= static_cast<double>(m.n);
  return grad.dot(param_cov * grad) + moment_grad.dot(moment_cov * moment_grad);
}

// ---------------------------------------------------------------------------

PiieResult estimate_piie(const Dataset& data, const EstimationConfig& config, const InferenceOptions& options) {
  if (!(options.level > 0.0 && options.level < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "confidence level must lie in (0, 1)");
  }
  const auto nuisance = fit_nuisances(data, config, needs_of(config.method));
  const auto est = estimate_psi(data, config, nuisance);

  PiieResult r;
  r.a_star = config.a_star;
  r.method = config.method;
  r.variance_method = options.variance;
  r.level = options.level;
  r.n = data.rows();
  r.dropped_rows = data.dropped_rows();
  r.ey = to_vector(data.outcome()).mean();
  r.psi = est.psi;
  r.piie = r.ey - r.psi;
  r.warnings = est.warnings;

  double variance = 0.0;
  switch (options.variance) {
    case VarianceMethod::sandwich: {
      const auto report = sandwich_variance(build_stacked_system(data, config, est));
      variance = report.piie_variance.value();
      break;
    }
    case VarianceMethod::bootstrap: {
      const auto report = bootstrap_variance(data, config, {options.B, options.seed, options.threads});
      variance = report.piie_variance.value();
      r.B = report.B;
      r.seed = options.seed;
      r.failed_resamples = report.failures;
      if (report.failures > 0) {
        r.warnings.push_back(std::to_string(report.failures) + " bootstrap resamples failed and were skipped");
      }
      break;
    }
    case VarianceMethod::closed_form: {
      if (config.method != Method::mle_alt && config.method != Method::closed_form) {
        throw Error(ErrorCode::unsupported_model, "closed-form variance applies to mle_alt and closed_form only");
      }
      if (config.a_star != 0) {
        throw Error(ErrorCode::unsupported_model, "closed-form variance is derived for a* = 0");
      }
      const auto& roles = data.roles();
      const auto theta = outcome_coefficients(*nuisance.outcome, roles);
      const auto beta = mediator_coefficients(*nuisance.mediator, roles);
      variance = closed_form_piie_variance(beta.a, theta.z, theta.az,
                                           closed_form_param_cov(*nuisance.outcome, *nuisance.mediator, roles),
                                           exposure_moments(data));
      break;
    }
  }
  r.se = std::sqrt(std::max(variance, 0.0));
  const auto ci = wald_ci(r.piie, std::max(variance, 0.0), options.level);
  r.ci_lower = ci.first;
  r.ci_upper = ci.second;
  return r;
}

}  // namespace piie
