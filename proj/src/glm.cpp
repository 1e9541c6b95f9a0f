#include "piie/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace piie {

namespace {

constexpr double kPivotTolerance = 1e-10;
constexpr double kDevianceTolerance = 1e-10;
constexpr int kMaxIterations = 100;
constexpr double kSeparationEta = 30.0;
constexpr double kProbFloor = 1e-15;

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

void check_dims(const Eigen::MatrixXd& X, std::span<const double> y) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) {
    throw Error(ErrorCode::dimension_mismatch, "design has " + std::to_string(X.rows()) +
                                                   " rows but response has " + std::to_string(y.size()));
  }
}

double binomial_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    dev -= 2.0 * (y[i] > 0.5 ? std::log(mu[i]) : std::log1p(-mu[i]));
  }
  return dev;
}

Eigen::VectorXd probabilities(const Eigen::VectorXd& eta) {
  return eta.unaryExpr([](double e) { return std::clamp(expit(e), kProbFloor, 1.0 - kProbFloor); });
}

}  // namespace

std::string_view to_string(MediatorFamily family) {
  return family == MediatorFamily::gaussian ? "gaussian" : "bernoulli";
}

double normal_density(double x, double mean, double variance) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

bool is_binary(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

LinearFit fit_linear(const DesignMatrix& design, std::span<const double> y) {
  const auto& X = design.X;
  check_dims(X, y);
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n <= p) {
    throw Error(ErrorCode::singular_design,
                "need more rows than columns (n=" + std::to_string(n) + ", p=" + std::to_string(p) + ")");
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  const auto& R = qr.matrixQR();
  const double largest = std::abs(R(0, 0));
  for (Eigen::Index k = 0; k < p; ++k) {
    if (std::abs(R(k, k)) <= kPivotTolerance * largest) {
      const auto col = static_cast<std::size_t>(qr.colsPermutation().indices()[k]);
      const std::string name = col < design.term_names.size() ? design.term_names[col] : std::to_string(col);
      throw Error(ErrorCode::singular_design, "design is rank deficient at column '" + name + "'");
    }
  }

  LinearFit fit;
  fit.spec = design.spec;
  const auto yv = as_vector(y);
  fit.coef = qr.solve(yv);
  const Eigen::VectorXd resid = yv - X * fit.coef;
  fit.sigma2 = resid.squaredNorm() / static_cast<double>(n);
  // Residuals at rounding level count as an exact fit.
  if (resid.norm() <= 64.0 * std::numeric_limits<double>::epsilon() * yv.norm()) fit.sigma2 = 0.0;

  // (X'X)^-1 = P R^-1 R^-T P'
  const Eigen::MatrixXd Rtop = R.topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Rinv =
      Rtop.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd inner = Rinv * Rinv.transpose();
  const auto& perm = qr.colsPermutation();
  fit.xtx_inv = perm * inner * perm.transpose();
  return fit;
}

LogisticFit fit_logistic(const DesignMatrix& design, std::span<const double> y) {
  const auto& X = design.X;
  check_dims(X, y);
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (!is_binary(y)) throw Error(ErrorCode::invalid_argument, "logistic response must be 0/1");
  if (n <= p) {
    throw Error(ErrorCode::singular_design,
                "need more rows than columns (n=" + std::to_string(n) + ", p=" + std::to_string(p) + ")");
  }
  const auto yv = as_vector(y);
  const double ybar = yv.mean();
  if (ybar == 0.0 || ybar == 1.0) {
    throw Error(ErrorCode::degenerate_outcome,
                "response '" + design.spec.response + "' is constant; logistic MLE does not exist");
  }

  LogisticFit fit;
  fit.spec = design.spec;
  fit.coef = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd mu = probabilities(eta);
  double dev = binomial_deviance(yv, mu);

  for (int iter = 1; iter <= kMaxIterations; ++iter) {
    fit.iterations = iter;
    const Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
    const Eigen::MatrixXd info = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd score = X.transpose() * (yv - mu);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    const auto d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || d.minCoeff() <= kPivotTolerance * dmax) {
      throw Error(ErrorCode::singular_design,
                  "weighted design for '" + design.spec.response + "' is singular");
    }
    Eigen::VectorXd step = ldlt.solve(score);

    Eigen::VectorXd candidate = fit.coef + step;
    Eigen::VectorXd cand_eta = X * candidate;
    Eigen::VectorXd cand_mu = probabilities(cand_eta);
    double cand_dev = binomial_deviance(yv, cand_mu);
    int halvings = 0;
    while (cand_dev > dev * (1.0 + 1e-12) + 1e-12 && halvings < 30) {
      step *= 0.5;
      candidate = fit.coef + step;
      cand_eta = X * candidate;
      cand_mu = probabilities(cand_eta);
      cand_dev = binomial_deviance(yv, cand_mu);
      ++halvings;
    }

    const double change = std::abs(cand_dev - dev) / (std::abs(cand_dev) + 0.1);
    const double step_size = step.cwiseAbs().maxCoeff() / (1.0 + candidate.cwiseAbs().maxCoeff());
    fit.coef = candidate;
    eta = cand_eta;
    mu = cand_mu;
    dev = cand_dev;
    fit.deviance_trace.push_back(dev);
    if (change < kDevianceTolerance && step_size < 1e-9) {
      fit.converged = true;
      break;
    }
  }

  if (!fit.converged) fit.warnings.push_back("IRLS did not converge in 100 iterations");
  if (eta.cwiseAbs().maxCoeff() > kSeparationEta) {
    fit.separation = true;
    fit.warnings.push_back("possible separation in model for '" + design.spec.response +
                           "': |linear predictor| exceeds 30");
  }
  return fit;
}

MediatorFamily infer_family(std::span<const double> z) {
  return is_binary(z) ? MediatorFamily::bernoulli : MediatorFamily::gaussian;
}

MediatorModel fit_mediator(const DesignMatrix& design, std::span<const double> z, MediatorFamily family) {
  MediatorModel model;
  model.family = family;
  if (family == MediatorFamily::bernoulli) {
    if (!is_binary(z)) {
      throw Error(ErrorCode::unsupported_model, "bernoulli mediator requires 0/1 values");
    }
    model.fit = fit_logistic(design, z);
  } else {
    model.fit = fit_linear(design, z);
  }
  return model;
}

const Eigen::VectorXd& MediatorModel::coef() const {
  return std::visit([](const auto& f) -> const Eigen::VectorXd& { return f.coef; }, fit);
}

const FormulaSpec& MediatorModel::spec() const {
  return std::visit([](const auto& f) -> const FormulaSpec& { return f.spec; }, fit);
}

double MediatorModel::sigma2() const {
  if (const auto* lin = std::get_if<LinearFit>(&fit)) return lin->sigma2;
  return 0.0;
}

double MediatorModel::mean(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const double eta = x.dot(coef());
  return family == MediatorFamily::bernoulli ? expit(eta) : eta;
}

double mediator_density(const MediatorModel& model, double z, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double m = model.mean(x);
  if (model.family == MediatorFamily::bernoulli) return z == 1.0 ? m : 1.0 - m;
  const double s2 = model.sigma2();
  if (!(s2 > 0.0)) {
    throw Error(ErrorCode::degenerate_density, "gaussian mediator model has zero residual variance");
  }
  return normal_density(z, m, s2);
}

Eigen::MatrixXd score_contributions(const LinearFit& fit, const Eigen::MatrixXd& X, std::span<const double> y) {
  check_dims(X, y);
  if (X.cols() != fit.coef.size()) throw Error(ErrorCode::dimension_mismatch, "coefficient length mismatch");
  const Eigen::VectorXd resid = as_vector(y) - X * fit.coef;
  return X.array().colwise() * resid.array();
}

Eigen::MatrixXd score_contributions(const LogisticFit& fit, const Eigen::MatrixXd& X, std::span<const double> y) {
  check_dims(X, y);
  if (X.cols() != fit.coef.size()) throw Error(ErrorCode::dimension_mismatch, "coefficient length mismatch");
  const Eigen::VectorXd eta = X * fit.coef;
  const Eigen::VectorXd resid = as_vector(y) - eta.unaryExpr([](double e) { return expit(e); });
  return X.array().colwise() * resid.array();
}

}  // namespace piie
