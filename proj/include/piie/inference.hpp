#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "piie/estimators.hpp"

namespace piie {

struct ParamBlock {
  std::string label;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

// Stacked M-estimation system: nuisance parameter blocks followed by the
// target ("psi") and optionally the outcome mean ("ey"). `scores` returns the
// n x K per-observation estimating functions at any parameter point.
struct StackedSystem {
  std::vector<ParamBlock> blocks;
  Eigen::VectorXd solution;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> scores;

  Eigen::Index dim() const { return solution.size(); }
  const ParamBlock* find(std::string_view label) const;
};

struct VarianceReport {
  VarianceMethod method = VarianceMethod::sandwich;
  double psi_variance = 0.0;
  // Variance of mean(Y) - psi; present when the system carries an "ey" block
  // (sandwich) or always for the bootstrap.
  std::optional<double> piie_variance;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd bread;
  std::size_t B = 0;
  std::size_t failures = 0;
  std::vector<double> psi_replicates;
  std::vector<double> piie_replicates;
};

// Blocks: theta (outcome), beta and sigma2_z (mediator), alpha (propensity),
// psi, ey. Only the blocks the estimator depends on are stacked.
StackedSystem build_stacked_system(const Dataset& data, const EstimationConfig& config, const PsiEstimate& estimate);

// A^-1 B A^-T with A the summed Jacobian (central differences, step
// sqrt(eps) * max(1, |param|)) and B the sum of score outer products.
VarianceReport sandwich_variance(const StackedSystem& system);

struct BootstrapOptions {
  std::size_t B = 500;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

// Row-level nonparametric bootstrap refitting every nuisance model. Failed
// resamples are skipped and counted; more than 5% failures is an error.
VarianceReport bootstrap_variance(const Dataset& data, const EstimationConfig& config, const BootstrapOptions& options);

double normal_cdf(double x);
double normal_quantile(double p);

std::pair<double, double> wald_ci(double estimate, double variance, double level);

struct ComparisonResult {
  Method method = Method::dr;
  double psi_method = 0.0;
  double psi_dr = 0.0;
  double diff = 0.0;
  double se_diff = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  std::size_t B = 0;
  std::size_t failures = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// Bootstrap test that config.method and the doubly robust estimator share a
// probability limit. Each resample feeds both estimators.
ComparisonResult hausman_compare(const Dataset& data, const EstimationConfig& config, const BootstrapOptions& options);

// Same test for several methods against one shared set of resamples.
std::vector<ComparisonResult> hausman_compare(const Dataset& data, const EstimationConfig& config,
                                              std::span<const Method> methods, const BootstrapOptions& options);

}  // namespace piie
