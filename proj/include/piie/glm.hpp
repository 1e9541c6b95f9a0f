#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "piie/data.hpp"

namespace piie {

// Gaussian linear model fitted by least squares. sigma2 uses the ML divisor n.
struct LinearFit {
  Eigen::VectorXd coef;
  double sigma2 = 0.0;
  FormulaSpec spec;
  Eigen::MatrixXd xtx_inv;
};

struct LogisticFit {
  Eigen::VectorXd coef;
  FormulaSpec spec;
  bool converged = false;
  int iterations = 0;
  bool separation = false;
  std::vector<std::string> warnings;
  // Deviance after each accepted iteration.
  std::vector<double> deviance_trace;
};

enum class MediatorFamily { gaussian, bernoulli };

std::string_view to_string(MediatorFamily family);

struct MediatorModel {
  MediatorFamily family = MediatorFamily::gaussian;
  std::variant<LinearFit, LogisticFit> fit;

  const Eigen::VectorXd& coef() const;
  const FormulaSpec& spec() const;
  // Residual variance of the gaussian family; 0 for bernoulli.
  double sigma2() const;
  // E[Z | design row]: linear predictor (gaussian) or probability (bernoulli).
  double mean(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

inline double expit(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double normal_density(double x, double mean, double variance);

bool is_binary(std::span<const double> values);

LinearFit fit_linear(const DesignMatrix& design, std::span<const double> y);

// Newton-Raphson / IRLS with step-halving. Stops when the relative deviance
// change falls below 1e-10 and the Newton step is negligible, or after 100
// iterations.
LogisticFit fit_logistic(const DesignMatrix& design, std::span<const double> y);

MediatorModel fit_mediator(const DesignMatrix& design, std::span<const double> z, MediatorFamily family);

// Family implied by the observed support: bernoulli for 0/1 data, gaussian otherwise.
MediatorFamily infer_family(std::span<const double> z);

// f(z | x) for the fitted mediator law at design row x.
double mediator_density(const MediatorModel& model, double z, const Eigen::Ref<const Eigen::VectorXd>& x);

// Per-observation estimating-function values, one row per observation.
Eigen::MatrixXd score_contributions(const LinearFit& fit, const Eigen::MatrixXd& X, std::span<const double> y);
Eigen::MatrixXd score_contributions(const LogisticFit& fit, const Eigen::MatrixXd& X, std::span<const double> y);

}  // namespace piie
