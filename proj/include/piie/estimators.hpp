#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "piie/data.hpp"
#include "piie/glm.hpp"

namespace piie {

enum class Method { mle, mle_alt, sp1, sp2, dr, closed_form };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

enum class PositivityPolicy { error, truncate };

struct EstimationConfig {
  int a_star = 0;
  Method method = Method::dr;
  std::optional<FormulaSpec> outcome_formula;
  std::optional<FormulaSpec> mediator_formula;
  std::optional<FormulaSpec> propensity_formula;
  // Inferred from the mediator's support when unset.
  std::optional<MediatorFamily> mediator_family;
  double propensity_floor = 1e-8;
  PositivityPolicy positivity = PositivityPolicy::error;
};

struct ModelNeeds {
  bool outcome = false;
  bool mediator = false;
  bool propensity = false;

  ModelNeeds operator|(const ModelNeeds& o) const {
    return {outcome || o.outcome, mediator || o.mediator, propensity || o.propensity};
  }
};

ModelNeeds needs_of(Method method);

// Checks a_star, formula presence for `needs`, responses and column roles.
void validate_config(const EstimationConfig& config, const Dataset& data, ModelNeeds needs);

struct NuisanceSet {
  std::optional<LinearFit> outcome;
  std::optional<MediatorModel> mediator;
  std::optional<LogisticFit> propensity;

  std::vector<std::string> warnings() const;
};

NuisanceSet fit_nuisances(const Dataset& data, const EstimationConfig& config, ModelNeeds needs);

// Raw nuisance parameter values. The stacked sandwich perturbs these.
struct NuisanceParams {
  Eigen::VectorXd theta;
  Eigen::VectorXd beta;
  double sigma2_z = 0.0;
  Eigen::VectorXd alpha;
};

NuisanceParams params_of(const NuisanceSet& nuisance);

struct PsiEstimate {
  double psi = 0.0;
  Eigen::VectorXd contributions;
  Method method = Method::dr;
  NuisanceSet nuisance;
  std::size_t truncated = 0;
  std::vector<std::string> warnings;
};

// Design rows of every observation under the counterfactual exposure and
// mediator values the estimators need, precomputed once per dataset so that
// summands can be re-evaluated cheaply at arbitrary parameter values.
//
// The outcome model enters only through E(Y | a, z, C), which is affine in z
// when every term has degree <= 1 in the mediator (always true for a 0/1
// mediator). The mediator integral is then m(a, 0) + E[Z] * (m(a, 1) - m(a, 0)).
class PsiEvaluator {
 public:
  PsiEvaluator(const Dataset& data, const NuisanceSet& nuisance, const EstimationConfig& config);

  std::size_t rows() const { return n_; }

  // Per-observation summands whose mean is the estimate of Psi.
  Eigen::VectorXd summands(Method method, const NuisanceParams& params, std::size_t* truncated = nullptr) const;

  // Scores of the fitted nuisance models at `params` (rows = observations).
  Eigen::MatrixXd outcome_scores(const Eigen::VectorXd& theta) const;
  Eigen::MatrixXd mediator_scores(const Eigen::VectorXd& beta) const;
  Eigen::VectorXd mediator_variance_scores(const Eigen::VectorXd& beta, double sigma2_z) const;
  Eigen::MatrixXd propensity_scores(const Eigen::VectorXd& alpha) const;

  const Eigen::VectorXd& outcome_values() const { return y_; }
  MediatorFamily family() const { return family_; }

 private:
  struct MediatorTerms {
    Eigen::VectorXd mean_star;      // E[Z | a*, C]
    Eigen::VectorXd mean_observed;  // E[Z | A, C]
    Eigen::VectorXd ratio;          // f(Z | a*, C) / f(Z | A, C)
  };

  void require_integrable() const;
  MediatorTerms mediator_terms(const NuisanceParams& params, bool with_ratio) const;
  Eigen::VectorXd treated_probability(const NuisanceParams& params) const;
  Eigen::VectorXd inverse_weight(const Eigen::VectorXd& p1, std::size_t* truncated) const;

  std::size_t n_ = 0;
  int a_star_ = 0;
  double floor_ = 1e-8;
  PositivityPolicy policy_ = PositivityPolicy::error;
  MediatorFamily family_ = MediatorFamily::gaussian;
  bool has_outcome_ = false, has_mediator_ = false, has_propensity_ = false;
  bool outcome_affine_in_z_ = true;

  Eigen::VectorXd y_, a_, z_;
  Eigen::MatrixXd outcome_design_;
  Eigen::MatrixXd outcome_base_[2];   // rows at (a, z = 0)
  Eigen::MatrixXd outcome_slope_[2];  // rows at (a, 1) minus rows at (a, 0)
  Eigen::MatrixXd outcome_at_z_[2];   // rows at (a, Z_i)
  Eigen::MatrixXd mediator_design_;
  Eigen::MatrixXd mediator_at_[2];    // rows at a
  Eigen::MatrixXd propensity_design_;
};

// Sum over the mediator of E(Y | a_eval, z, C_i) f(z | a_cond, C_i), evaluated
// directly from the fitted models for observation i.
double integrate_over_mediator(const NuisanceSet& nuisance, const Dataset& data, std::size_t i, double a_eval,
                               double a_cond);

PsiEstimate estimate_psi(const Dataset& data, const EstimationConfig& config);
PsiEstimate estimate_psi(const Dataset& data, const EstimationConfig& config, const NuisanceSet& nuisance);

PsiEstimate estimate_psi_mle(const Dataset& data, const EstimationConfig& config);
PsiEstimate estimate_psi_mle_alt(const Dataset& data, const EstimationConfig& config);
PsiEstimate estimate_psi_sp1(const Dataset& data, const EstimationConfig& config);
PsiEstimate estimate_psi_sp2(const Dataset& data, const EstimationConfig& config);
PsiEstimate estimate_psi_dr(const Dataset& data, const EstimationConfig& config);

// Efficient influence function values: the three data terms minus psi_ref.
Eigen::VectorXd eif_contributions(const NuisanceSet& nuisance, const Dataset& data, int a_star, double psi_ref);

// ---------------------------------------------------------------------------
// Closed form for the linear outcome / linear gaussian mediator pair.

struct OutcomeCoefficients {
  double intercept = 0.0, a = 0.0, z = 0.0, az = 0.0;
  std::vector<Term> covariate_terms;
  Eigen::VectorXd covariates;
};

struct MediatorCoefficients {
  double intercept = 0.0, a = 0.0;
  std::vector<Term> covariate_terms;
  Eigen::VectorXd covariates;
};

// Empirical moments. Covariate "features" are the covariate-only terms of each
// formula (products such as c1:c2 count as features).
struct ClosedFormMoments {
  double mean_a = 0.0;
  Eigen::VectorXd mean_c_outcome;
  Eigen::VectorXd mean_c_mediator;
  Eigen::VectorXd mean_a_c_mediator;
};

OutcomeCoefficients outcome_coefficients(const LinearFit& fit, const Roles& roles);
MediatorCoefficients mediator_coefficients(const MediatorModel& model, const Roles& roles);
ClosedFormMoments closed_form_moments(const OutcomeCoefficients& theta, const MediatorCoefficients& beta,
                                      const Dataset& data);

double closed_form_psi(const OutcomeCoefficients& theta, const MediatorCoefficients& beta, int a_star,
                       const ClosedFormMoments& moments);

struct ExposureMoments {
  double mean_a = 0.0, mean_a2 = 0.0;
  // Sample (co)variances of A and A^2, divisor n - 1.
  double var_a = 0.0, var_a2 = 0.0, cov_a_a2 = 0.0;
  std::size_t n = 0;
};

ExposureMoments exposure_moments(const Dataset& data);

// Joint covariance of (beta_a, theta_z, theta_az) from the two fits.
Eigen::Matrix3d closed_form_param_cov(const LinearFit& outcome, const MediatorModel& mediator, const Roles& roles);

// Delta-method variance of PIIE(0) = beta_a (theta_z E[A] + theta_az E[A^2]).
// The moment terms use the variance of the sample means, i.e. S^2 / n.
double closed_form_piie_variance(double beta_a, double theta_z, double theta_az, const Eigen::Matrix3d& param_cov,
                                 const ExposureMoments& moments);

// ---------------------------------------------------------------------------

enum class VarianceMethod { sandwich, bootstrap, closed_form };

std::string_view to_string(VarianceMethod method);
VarianceMethod parse_variance_method(std::string_view name);

struct InferenceOptions {
  VarianceMethod variance = VarianceMethod::sandwich;
  double level = 0.95;
  std::size_t B = 500;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct PiieResult {
  double ey = 0.0;
  double psi = 0.0;
  double piie = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double level = 0.95;
  int a_star = 0;
  Method method = Method::dr;
  VarianceMethod variance_method = VarianceMethod::sandwich;
  std::size_t n = 0;
  std::size_t dropped_rows = 0;
  std::size_t B = 0;
  std::size_t failed_resamples = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

PiieResult estimate_piie(const Dataset& data, const EstimationConfig& config, const InferenceOptions& options);

}  // namespace piie
