#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "piie/data.hpp"
#include "piie/estimators.hpp"

namespace piie {

// Simulation design with binary covariates c1, c2, c3, binary exposure a,
// gaussian mediator z and gaussian outcome y.
struct DgpParams {
  double p_c1 = 0.6;
  std::array<double, 2> c2_logit{1.0, 0.5};                   // 1, c1
  double p_c3 = 0.3;
  std::array<double, 5> exposure_logit{0.5, 0.2, 0.4, 0.5, 0.2};  // 1, c1, c2, c1c2, c3
  std::array<double, 5> mediator_coef{1.0, 1.0, -2.0, 2.0, 8.0};  // 1, a, c1, c2, c1c2
  double mediator_variance = 4.0;
  std::array<double, 8> outcome_coef{1.0, 2.0, 2.0, -8.0, 3.0, 1.0, 1.0, 1.0};  // 1, a, z, az, c1, c2, c1c2, c3
  double outcome_variance = 1.0;
  // Zeroes the a and a:z outcome coefficients.
  bool direct_effect_off = false;
  // Adds a latent U ~ Ber(confounder_prob) to the exposure and outcome
  // predictors. U is never emitted.
  bool confounded = false;
  double confounder_prob = 0.5;
  double confounder_exposure_loading = 1.0;
  double confounder_outcome_loading = 1.0;

  void validate() const;

  double mediator_mean(double a, double c1, double c2) const;
  double outcome_mean(double a, double z, double c1, double c2, double c3, double u) const;
  double exposure_probability(double c1, double c2, double c3, double u) const;
  double c2_probability(double c1) const;
};

Dataset generate_dgp(const DgpParams& params, std::size_t n, std::uint64_t seed);

// Exact values by enumerating the discrete part of the design.
struct ExactTruth {
  double psi = 0.0;
  double ey = 0.0;
  double ey_a_star = 0.0;
  double piie = 0.0;
  double pie = 0.0;
  double pide = 0.0;
  double pr_a1 = 0.0;
};

ExactTruth exact_truth(const DgpParams& params, int a_star);

struct OracleTruth {
  double psi = 0.0, psi_se = 0.0;
  // Mean of Y(A, Z(a*)) from the structural equations.
  double psi_simulated = 0.0, psi_simulated_se = 0.0;
  double piie = 0.0, piie_se = 0.0;
  double pie = 0.0, pie_se = 0.0;
  double pide = 0.0, pide_se = 0.0;
  double ey = 0.0, ey_se = 0.0;
  std::size_t draws = 0;
};

OracleTruth oracle_truth(const DgpParams& params, int a_star, std::size_t draws, std::uint64_t seed);

// One support point of a finite joint law over (y, a, z, c).
struct DiscreteCell {
  double y = 0.0, a = 0.0, z = 0.0;
  std::vector<double> c;
  double prob = 0.0;
};

// Literal triple sum over the joint law. Zero-probability conditioning events
// that the sum needs raise a positivity error.
double brute_force_psi(std::span<const DiscreteCell> joint, int a_star);

// Dataset holding `counts[k]` copies of cell k, with covariates named `covariates`.
Dataset dataset_from_cells(std::span<const DiscreteCell> cells, std::span<const std::size_t> counts,
                           const std::vector<std::string>& covariates);

struct ScenarioSpec {
  char id = 'a';
  std::string label;
  FormulaSpec outcome;
  FormulaSpec mediator;
  FormulaSpec propensity;
};

ScenarioSpec scenario(char id);
std::vector<ScenarioSpec> all_scenarios();

struct OCOptions {
  std::size_t reps = 1000;
  std::size_t n = 1000;
  std::uint64_t master_seed = 1;
  unsigned threads = 1;
  double level = 0.95;
  int a_star = 0;
  DgpParams params;
};

struct OCRow {
  char scenario = 'a';
  Method estimator = Method::dr;
  double true_psi = 0.0;
  double true_piie = 0.0;
  double mean_psi = 0.0;
  double mean_piie = 0.0;
  double mc_variance = 0.0;
  double mean_estimated_variance = 0.0;
  double prop_bias = 0.0;
  double coverage = 0.0;
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::size_t n = 0;
  std::uint64_t master_seed = 0;
  // More than 1% of replicates failed.
  bool flagged = false;

  bool biased() const;
};

struct ReplicateRecord {
  char scenario = 'a';
  std::size_t rep = 0;
  Method estimator = Method::dr;
  bool ok = false;
  double psi = 0.0;
  double piie = 0.0;
  double variance = 0.0;
  bool covered = false;
};

struct OCTable {
  std::vector<OCRow> rows;
  std::vector<ReplicateRecord> replicates;

  void append(const OCTable& other);
};

// Replicate r uses the dataset generate_dgp(params, n, derive_seed(master_seed, r))
// whatever the scenario, so scenarios share data.
OCTable run_operating_characteristics(const ScenarioSpec& spec, std::span<const Method> estimators,
                                      const OCOptions& options);

struct IdentityCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double se = 0.0;

  bool holds(double k = 3.0) const;
};

struct DecompositionReport {
  double pie = 0.0, pie_se = 0.0;
  double piie = 0.0, piie_se = 0.0;
  double pide = 0.0, pide_se = 0.0;
  double ett = 0.0, ett_se = 0.0;
  double pr_a1 = 0.0, pr_a1_se = 0.0;
  double ey = 0.0, ey_se = 0.0;
  // Binary outcome 1{Y > threshold}.
  double threshold = 0.0;
  double af = 0.0, af_se = 0.0;
  double ey_binary = 0.0, ey_binary_se = 0.0;
  double pie_binary = 0.0, pie_binary_se = 0.0;
  std::size_t draws = 0;
  std::vector<IdentityCheck> checks;

  bool all_hold(double k = 3.0) const;
};

// a* = 0. Each side of every identity comes from its own random stream.
DecompositionReport decomposition_check(const DgpParams& params, std::size_t draws, std::uint64_t seed);

// `key = value` lines; '#' starts a comment. Keys are documented in the README.
std::map<std::string, std::string> parse_key_values(std::istream& in);
void apply_overrides(DgpParams& params, std::map<char, ScenarioSpec>& scenarios,
                     const std::map<std::string, std::string>& values);

}  // namespace piie
