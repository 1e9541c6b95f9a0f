#include "piie/inference.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "piie/parallel.hpp"

namespace piie {

const ParamBlock* StackedSystem::find(std::string_view label) const {
  for (const auto& b : blocks) {
    if (b.label == label) return &b;
  }
  return nullptr;
}

StackedSystem build_stacked_system(const Dataset& data, const EstimationConfig& config, const PsiEstimate& estimate) {
  const auto evaluator = std::make_shared<const PsiEvaluator>(data, estimate.nuisance, config);
  const auto& nuisance = estimate.nuisance;
  const Method method = estimate.method == Method::closed_form ? Method::mle_alt : estimate.method;
  const auto needs = needs_of(method);
  const bool gaussian = nuisance.mediator && nuisance.mediator->family == MediatorFamily::gaussian;
  const bool with_sigma = needs.mediator && gaussian && (method == Method::sp1 || method == Method::dr);
  const auto params = params_of(nuisance);

  StackedSystem sys;
  std::vector<double> values;
  auto add = [&](const std::string& label, const Eigen::VectorXd& v) {
    sys.blocks.push_back({label, static_cast<Eigen::Index>(values.size()), v.size()});
    values.insert(values.end(), v.data(), v.data() + v.size());
  };
  if (needs.outcome) add("theta", params.theta);
  if (needs.mediator) add("beta", params.beta);
  if (with_sigma) add("sigma2_z", Eigen::VectorXd::Constant(1, params.sigma2_z));
  if (needs.propensity) add("alpha", params.alpha);
  add("psi", Eigen::VectorXd::Constant(1, estimate.contributions.mean()));
  add("ey", Eigen::VectorXd::Constant(1, evaluator->outcome_values().mean()));
  sys.solution = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));

  const auto blocks = sys.blocks;
  sys.scores = [evaluator, blocks, needs, with_sigma, method](const Eigen::VectorXd& x) {
    const auto n = static_cast<Eigen::Index>(evaluator->rows());
    Eigen::MatrixXd U(n, x.size());
    NuisanceParams p;
    std::size_t k = 0;
    auto next = [&]() -> const ParamBlock& { return blocks[k++]; };
    if (needs.outcome) {
      const auto& b = next();
      p.theta = x.segment(b.offset, b.size);
      U.middleCols(b.offset, b.size) = evaluator->outcome_scores(p.theta);
    }
    if (needs.mediator) {
      const auto& b = next();
      p.beta = x.segment(b.offset, b.size);
      U.middleCols(b.offset, b.size) = evaluator->mediator_scores(p.beta);
    }
    if (with_sigma) {
      const auto& b = next();
      p.sigma2_z = x[b.offset];
      U.col(b.offset) = evaluator->mediator_variance_scores(p.beta, p.sigma2_z);
    }
    if (needs.propensity) {
      const auto& b = next();
      p.alpha = x.segment(b.offset, b.size);
      U.middleCols(b.offset, b.size) = evaluator->propensity_scores(p.alpha);
    }
    const auto& psi = next();
    U.col(psi.offset) = (evaluator->summands(method, p).array() - x[psi.offset]).matrix();
    const auto& ey = next();
    U.col(ey.offset) = (evaluator->outcome_values().array() - x[ey.offset]).matrix();
    return U;
  };
  return sys;
}

VarianceReport sandwich_variance(const StackedSystem& system) {
  const Eigen::Index K = system.dim();
  const Eigen::MatrixXd U = system.scores(system.solution);
  if (U.cols() != K) throw Error(ErrorCode::dimension_mismatch, "score matrix width differs from parameter count");

  const double cbrt_eps = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::MatrixXd A(K, K);
  Eigen::VectorXd x = system.solution;
  for (Eigen::Index j = 0; j < K; ++j) {
    const double p = system.solution[j];
    volatile double shifted = p + cbrt_eps * std::max(1.0, std::abs(p));
    const double h = shifted - p;
    x[j] = p + h;
    const Eigen::VectorXd up = system.scores(x).colwise().sum().transpose();
    x[j] = p - h;
    const Eigen::VectorXd down = system.scores(x).colwise().sum().transpose();
    x[j] = system.solution[j];
    A.col(j) = (up - down) / (2.0 * h);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  const auto& R = qr.matrixQR();
  const double largest = std::abs(R(0, 0));
  for (Eigen::Index k = 0; k < K; ++k) {
    if (!(std::abs(R(k, k)) > 1e-12 * largest)) {
      const Eigen::Index col = qr.colsPermutation().indices()[k];
      std::string label = "?";
      for (const auto& b : system.blocks) {
        if (col >= b.offset && col < b.offset + b.size) label = b.label;
      }
      throw Error(ErrorCode::singular_design, "sandwich bread matrix is singular in block '" + label + "'");
    }
  }
  const Eigen::MatrixXd Ainv = qr.inverse();
  const Eigen::MatrixXd meat = U.transpose() * U;

  VarianceReport report;
  report.method = VarianceMethod::sandwich;
  report.bread = A;
  report.covariance = Ainv * meat * Ainv.transpose();
  const auto* psi = system.find("psi");
  if (!psi) throw Error(ErrorCode::invalid_argument, "stacked system has no 'psi' block");
  const Eigen::Index ip = psi->offset;
  report.psi_variance = std::max(0.0, report.covariance(ip, ip));
  if (const auto* ey = system.find("ey")) {
    const Eigen::Index ie = ey->offset;
    const auto& V = report.covariance;
    report.piie_variance = std::max(0.0, V(ie, ie) + V(ip, ip) - 2.0 * V(ie, ip));
  }
  return report;
}

namespace {

std::vector<std::size_t> draw_rows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = pick(rng);
  return rows;
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

void check_failures(std::size_t failures, std::size_t B) {
  if (static_cast<double>(failures) > 0.05 * static_cast<double>(B)) {
    throw Error(ErrorCode::resample_failure, std::to_string(failures) + " of " + std::to_string(B) +
                                                 " bootstrap resamples failed (limit 5%)");
  }
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

VarianceReport bootstrap_variance(const Dataset& data, const EstimationConfig& config, const BootstrapOptions& options) {
  if (options.B < 2) throw Error(ErrorCode::invalid_argument, "bootstrap needs B >= 2");
  data.require_estimable();
  validate_config(config, data, needs_of(config.method));

  struct Draw {
    bool ok = false;
    double psi = 0.0, piie = 0.0;
  };
  std::vector<Draw> draws(options.B);
  parallel_for(options.B, options.threads, [&](std::size_t b) {
    const auto resampled = data.resample(draw_rows(data.rows(), derive_seed(options.seed, b)));
    try {
      const auto est = estimate_psi(resampled, config);
      const double ey = mean_of(resampled.outcome());
      draws[b] = {true, est.psi, ey - est.psi};
    } catch (const Error&) {
      draws[b] = {};
    }
  });

  VarianceReport report;
  report.method = VarianceMethod::bootstrap;
  for (const auto& d : draws) {
    if (!d.ok) {
      ++report.failures;
      continue;
    }
    report.psi_replicates.push_back(d.psi);
    report.piie_replicates.push_back(d.piie);
  }
  check_failures(report.failures, options.B);
  report.B = report.psi_replicates.size();
  report.psi_variance = sample_variance(report.psi_replicates);
  report.piie_variance = sample_variance(report.piie_replicates);
  return report;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::invalid_argument, "quantile probability must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

std::pair<double, double> wald_ci(double estimate, double variance, double level) {
  if (!(variance >= 0.0)) throw Error(ErrorCode::invalid_argument, "variance must be non-negative");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::invalid_argument, "level must lie in (0, 1)");
  const double half = normal_quantile(0.5 * (1.0 + level)) * std::sqrt(variance);
  return {estimate - half, estimate + half};
}

ComparisonResult hausman_compare(const Dataset& data, const EstimationConfig& config, const BootstrapOptions& options) {
  const Method methods[] = {config.method};
  return hausman_compare(data, config, methods, options).front();
}

std::vector<ComparisonResult> hausman_compare(const Dataset& data, const EstimationConfig& config,
                                              std::span<const Method> methods, const BootstrapOptions& options) {
  if (options.B < 2) throw Error(ErrorCode::invalid_argument, "bootstrap needs B >= 2");
  ModelNeeds needs = needs_of(Method::dr);
  for (Method m : methods) {
    if (m == Method::closed_form) throw Error(ErrorCode::invalid_argument, "closed_form is not a comparison method");
    needs = needs | needs_of(m);
  }
  EstimationConfig dr_config = config;
  dr_config.method = Method::dr;

  auto all_estimates = [&](const Dataset& d) {
    const auto nuisance = fit_nuisances(d, dr_config, needs);
    const PsiEvaluator evaluator(d, nuisance, dr_config);
    const auto params = params_of(nuisance);
    std::vector<double> psi;
    psi.push_back(evaluator.summands(Method::dr, params).mean());
    for (Method m : methods) psi.push_back(evaluator.summands(m, params).mean());
    return psi;
  };

  const auto full = all_estimates(data);
  const std::size_t M = methods.size();
  std::vector<std::vector<double>> diffs(options.B);
  parallel_for(options.B, options.threads, [&](std::size_t b) {
    const auto resampled = data.resample(draw_rows(data.rows(), derive_seed(options.seed, b)));
    try {
      const auto psi = all_estimates(resampled);
      std::vector<double> d(M);
      for (std::size_t m = 0; m < M; ++m) d[m] = psi[m + 1] - psi[0];
      diffs[b] = std::move(d);
    } catch (const Error&) {
      diffs[b].clear();
    }
  });

  std::size_t failures = 0;
  for (const auto& d : diffs) failures += d.empty();
  check_failures(failures, options.B);

  std::vector<ComparisonResult> out;
  for (std::size_t m = 0; m < M; ++m) {
    ComparisonResult r;
    r.method = methods[m];
    r.psi_dr = full[0];
    r.psi_method = full[m + 1];
    r.diff = r.psi_method - r.psi_dr;
    std::vector<double> column;
    for (const auto& d : diffs) {
      if (!d.empty()) column.push_back(d[m]);
    }
    r.B = column.size();
    r.failures = failures;
    r.seed = options.seed;
    r.se_diff = std::sqrt(sample_variance(column));
    if (r.se_diff > 0.0) {
      r.z = r.diff / r.se_diff;
      r.p_value = std::clamp(std::erfc(std::abs(r.z) / std::sqrt(2.0)), 0.0, 1.0);
    } else if (r.diff == 0.0) {
      r.z = 0.0;
      r.p_value = 1.0;
    } else {
      r.z = std::copysign(std::numeric_limits<double>::infinity(), r.diff);
      r.p_value = 0.0;
      r.warnings.push_back("bootstrap standard error of the difference is zero");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace piie
