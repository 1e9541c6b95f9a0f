#include "doctest.h"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "piie/estimators.hpp"
#include "piie/inference.hpp"
#include "piie/simulate.hpp"

using namespace piie;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::invalid_argument;
}

EstimationConfig scenario_config(char id, Method method, int a_star = 0) {
  const auto s = scenario(id);
  EstimationConfig c;
  c.a_star = a_star;
  c.method = method;
  c.outcome_formula = s.outcome;
  c.mediator_formula = s.mediator;
  c.propensity_formula = s.propensity;
  return c;
}

EstimationConfig saturated(Method method, int a_star) {
  EstimationConfig c;
  c.a_star = a_star;
  c.method = method;
  c.outcome_formula = parse_formula(oracle::saturated_outcome());
  c.mediator_formula = parse_formula(oracle::saturated_mediator());
  c.propensity_formula = parse_formula(oracle::saturated_propensity());
  c.mediator_family = MediatorFamily::bernoulli;
  return c;
}

Dataset transform_outcome(const Dataset& d, double scale, double shift) {
  std::vector<std::string> names = d.column_names();
  std::vector<std::vector<double>> cols;
  for (const auto& n : names) {
    const auto c = d.column(n);
    std::vector<double> v(c.begin(), c.end());
    if (n == d.roles().outcome) {
      for (auto& x : v) x = scale * x + shift;
    }
    cols.push_back(std::move(v));
  }
  return Dataset(names, std::move(cols), d.roles());
}

double mean_y(const Dataset& d) {
  const auto y = d.outcome();
  double s = 0.0;
  for (double v : y) s += v;
  return s / static_cast<double>(y.size());
}

const Method kAll[] = {Method::mle, Method::mle_alt, Method::sp1, Method::sp2, Method::dr};

}  // namespace

TEST_CASE("saturated estimators equal the enumeration oracle") {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 60; ++t) {
    const auto world = oracle::random_world(rng);
    const auto data = world.dataset();
    for (int a_star : {0, 1}) {
      const double truth = brute_force_psi(world.cells, a_star);
      for (Method m : kAll) {
        const auto est = estimate_psi(data, saturated(m, a_star));
        CHECK_MESSAGE(std::abs(est.psi - truth) <= 1e-8, to_string(m) << " world " << t);
      }
    }
  }
}

TEST_CASE("library influence function matches the exact one in discrete worlds") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 20; ++t) {
    const auto world = oracle::random_world(rng);
    const auto data = world.dataset();
    const oracle::Law law(world.cells);
    const int a_star = t % 2;
    const double truth = brute_force_psi(world.cells, a_star);
    const auto config = saturated(Method::dr, a_star);
    const auto nuisance = fit_nuisances(data, config, needs_of(Method::dr));
    const auto eif = eif_contributions(nuisance, data, a_star, truth);

    std::size_t row = 0;
    double expectation = 0.0;
    for (std::size_t k = 0; k < world.cells.size(); ++k) {
      const double exact = law.eif(world.cells[k], a_star, truth);
      expectation += world.cells[k].prob * exact;
      for (std::size_t r = 0; r < world.counts[k]; ++r, ++row) CHECK(std::abs(eif[row] - exact) <= 1e-7);
    }
    CHECK(std::abs(expectation) <= 1e-12);
  }
}

TEST_CASE("influence function is centered at the doubly robust estimate") {
  for (char id : {'a', 'c', 'd'}) {
    const auto data = generate_dgp(DgpParams{}, 2000, 31 + id);
    const auto config = scenario_config(id, Method::dr);
    const auto est = estimate_psi(data, config);
    const auto eif = eif_contributions(est.nuisance, data, 0, est.psi);
    CHECK(std::abs(eif.mean()) <= 1e-10);
    CHECK(std::abs(est.contributions.mean() - est.psi) <= 1e-10);
  }
}

TEST_CASE("integration over the mediator") {
  // Bernoulli mediator with probability one half; outcome 2 when z = 1, 0 otherwise.
  std::vector<double> y, a, z, c;
  for (int i = 0; i < 8; ++i) {
    a.push_back(i % 2);
    z.push_back((i / 2) % 2);
    y.push_back(2.0 * z.back());
    c.push_back(0.0);
  }
  const Dataset d({"y", "a", "z", "c1"}, {y, a, z, c}, Roles{"y", "a", "z", {"c1"}});
  EstimationConfig config;
  config.method = Method::mle_alt;
  config.outcome_formula = parse_formula("y ~ z");
  config.mediator_formula = parse_formula("z ~ 1");
  config.mediator_family = MediatorFamily::bernoulli;
  const auto nuisance = fit_nuisances(d, config, needs_of(Method::mle_alt));
  CHECK(integrate_over_mediator(nuisance, d, 0, 1.0, 0.0) == doctest::Approx(1.0).epsilon(1e-9));

  // Gaussian mediator: plug the conditional mean into the linear outcome.
  const auto data = generate_dgp(DgpParams{}, 500, 4);
  auto g = scenario_config('a', Method::mle_alt);
  g.outcome_formula = parse_formula("y ~ a + z + c1 + c2 + c1:c2 + c3");
  const auto fits = fit_nuisances(data, g, needs_of(Method::mle_alt));
  const auto& th = fits.outcome->coef;
  const auto& be = fits.mediator->coef();
  for (std::size_t i : {0u, 7u, 99u}) {
    const double c1 = data.column("c1")[i], c2 = data.column("c2")[i], c3 = data.column("c3")[i];
    const double mu0 = be[0] + be[2] * c1 + be[3] * c2 + be[4] * c1 * c2;
    const double expected = th[0] + th[1] * 1.0 + th[2] * mu0 + th[3] * c1 + th[4] * c2 + th[5] * c1 * c2 + th[6] * c3;
    CHECK(integrate_over_mediator(fits, data, i, 1.0, 0.0) == doctest::Approx(expected).epsilon(1e-12));
  }

  g.outcome_formula = parse_formula("y ~ a + z + z:z + c1");
  CHECK(code_of([&] { estimate_psi(data, g); }) == ErrorCode::unsupported_model);
}

TEST_CASE("closed form equals the alternate plug-in estimator") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto data = generate_dgp(DgpParams{}, 1500, seed);
    for (int a_star : {0, 1}) {
      const auto alt = estimate_psi(data, scenario_config('a', Method::mle_alt, a_star));
      const auto cf = estimate_psi(data, scenario_config('a', Method::closed_form, a_star));
      CHECK(std::abs(alt.psi - cf.psi) <= 1e-10);
    }
  }
  auto bad = scenario_config('a', Method::closed_form);
  bad.outcome_formula = parse_formula("y ~ a + z + a:z + z:c1");
  CHECK(code_of([&] { estimate_psi(generate_dgp(DgpParams{}, 300, 1), bad); }) == ErrorCode::unsupported_model);
}

TEST_CASE("closed form with no pathway through the mediator") {
  OutcomeCoefficients th;
  th.intercept = 1.0;
  th.a = 0.0;
  th.z = 2.0;
  th.az = 0.0;
  MediatorCoefficients be;
  be.intercept = 3.0;
  be.a = 0.0;
  ClosedFormMoments m;
  m.mean_a = 0.4;
  CHECK(closed_form_psi(th, be, 0, m) == closed_form_psi(th, be, 1, m));
  ExposureMoments em{0.4, 0.4, 0.24, 0.24, 0.24, 100};
  CHECK(closed_form_piie_variance(0.0, 2.0, 0.0, Eigen::Matrix3d::Zero(), em) == 0.0);
  ExposureMoments continuous{0.4, 0.5, 0.24, 0.3, 0.2, 100};
  CHECK(code_of([&] { closed_form_piie_variance(1.0, 2.0, 0.0, Eigen::Matrix3d::Zero(), continuous); }) ==
        ErrorCode::unsupported_model);
}

TEST_CASE("outcome model without the mediator gives a null PIIE") {
  const auto data = generate_dgp(DgpParams{}, 800, 12);
  auto config = scenario_config('a', Method::mle_alt);
  config.outcome_formula = parse_formula("y ~ a + c1 + c2 + c1:c2 + c3");
  const auto est = estimate_psi(data, config);
  CHECK(std::abs(mean_y(data) - est.psi) <= 1e-10);
}

TEST_CASE("weights are one when the mediator law ignores the exposure") {
  const auto data = generate_dgp(DgpParams{}, 800, 13);
  auto config = scenario_config('a', Method::sp1);
  config.mediator_formula = parse_formula("z ~ c1 + c2 + c1:c2");
  const auto est = estimate_psi(data, config);
  CHECK(std::abs(est.psi - mean_y(data)) <= 1e-10);
}

TEST_CASE("location and scale equivariance") {
  const auto data = generate_dgp(DgpParams{}, 1000, 14);
  const double c = -2.5, d = 7.0;
  const auto moved = transform_outcome(data, c, d);
  for (Method m : {Method::sp1, Method::mle_alt, Method::dr, Method::mle, Method::sp2}) {
    const auto config = scenario_config('a', m);
    const auto base = estimate_psi(data, config);
    const auto shifted = estimate_psi(moved, config);
    const auto scaled = estimate_psi(transform_outcome(data, c, 0.0), config);
    CHECK(std::abs(scaled.psi - c * base.psi) <= 1e-9 * (1.0 + std::abs(base.psi)));
    // Weighting estimators are not location equivariant: their weights do not average to one exactly.
    if (m == Method::sp1 || m == Method::sp2) continue;
    CHECK(std::abs(shifted.psi - (c * base.psi + d)) <= 1e-9 * (1.0 + std::abs(base.psi)));
    const double piie = mean_y(data) - base.psi;
    const double piie_moved = mean_y(moved) - shifted.psi;
    CHECK(std::abs(piie_moved - c * piie) <= 1e-9 * (1.0 + std::abs(piie)));
  }
}

TEST_CASE("positivity handling") {
  auto data = generate_dgp(DgpParams{}, 1000, 15);
  auto config = scenario_config('a', Method::sp2);
  config.propensity_floor = 0.3;
  CHECK(code_of([&] { estimate_psi(data, config); }) == ErrorCode::positivity);
  config.positivity = PositivityPolicy::truncate;
  const auto est = estimate_psi(data, config);
  CHECK(est.truncated > 0);
  CHECK_FALSE(est.warnings.empty());

  // A far outlier in the mediator makes its fitted density underflow.
  const auto big = generate_dgp(DgpParams{}, 100000, 16);
  std::vector<std::vector<double>> cols;
  for (const auto& n : big.column_names()) {
    const auto col = big.column(n);
    cols.emplace_back(col.begin(), col.end());
  }
  cols[2][0] = 1e4;
  const Dataset outlier(big.column_names(), std::move(cols), big.roles());
  CHECK(code_of([&] { estimate_psi(outlier, scenario_config('a', Method::sp1)); }) == ErrorCode::positivity);
}

TEST_CASE("configuration checks") {
  const auto data = generate_dgp(DgpParams{}, 300, 1);
  auto config = scenario_config('a', Method::dr);
  config.propensity_formula.reset();
  try {
    estimate_psi(data, config);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_argument);
    CHECK(std::string(e.what()).find("propensity") != std::string::npos);
  }
  config = scenario_config('a', Method::sp1);
  config.outcome_formula.reset();
  config.propensity_formula.reset();
  CHECK_NOTHROW(estimate_psi(data, config));
  config.a_star = 2;
  CHECK(code_of([&] { estimate_psi(data, config); }) == ErrorCode::invalid_argument);
  config = scenario_config('a', Method::mle_alt);
  config.outcome_formula = parse_formula("z ~ a + c1");
  CHECK(code_of([&] { estimate_psi(data, config); }) == ErrorCode::invalid_argument);
  CHECK(parse_method("sp2") == Method::sp2);
  CHECK(code_of([] { parse_method("mle2"); }) == ErrorCode::invalid_argument);
}

TEST_CASE("double robustness at a large sample size") {
  const auto truth = exact_truth(DgpParams{}, 0);
  const auto data = generate_dgp(DgpParams{}, 200000, 99);
  for (char id : {'c', 'd'}) {
    const auto config = scenario_config(id, Method::dr);
    const auto est = estimate_psi(data, config);
    const auto var = sandwich_variance(build_stacked_system(data, config, est));
    CHECK_MESSAGE(std::abs(est.psi - truth.psi) <= 4.0 * std::sqrt(var.psi_variance), "scenario " << id);
  }
  const auto mle_c = estimate_psi(data, scenario_config('c', Method::mle_alt));
  CHECK(std::abs((mean_y(data) - mle_c.psi - truth.piie) / truth.piie) > 0.2);
  const auto sp2_c = estimate_psi(data, scenario_config('c', Method::sp2));
  CHECK(std::abs((mean_y(data) - sp2_c.psi - truth.piie) / truth.piie) > 0.2);
  const auto sp1_d = estimate_psi(data, scenario_config('d', Method::sp1));
  CHECK(std::abs((mean_y(data) - sp1_d.psi - truth.piie) / truth.piie) > 0.2);
  const auto sp1_c = estimate_psi(data, scenario_config('c', Method::sp1));
  CHECK(std::abs(sp1_c.psi - truth.psi) < 0.1);
}

TEST_CASE("residual orthogonality of the first influence term") {
  const auto data = generate_dgp(DgpParams{}, 100000, 5);
  const auto config = scenario_config('a', Method::dr);
  const auto nuisance = fit_nuisances(data, config, needs_of(Method::dr));
  const auto y = data.outcome();
  const auto z = data.mediator();
  const auto a = data.exposure();
  const auto X = build_design(*config.outcome_formula, data).X;
  const Eigen::VectorXd fitted = X * nuisance.outcome->coef;
  double cov = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double resid = y[i] - fitted[static_cast<Eigen::Index>(i)];
    const double f = std::sin(z[i]) + a[i];
    cov += resid * f;
    scale += std::abs(resid * f);
  }
  CHECK(std::abs(cov) / scale < 0.01);
}

TEST_CASE("piie result") {
  const auto data = generate_dgp(DgpParams{}, 1000, 8);
  InferenceOptions options;
  const auto r = estimate_piie(data, scenario_config('a', Method::dr), options);
  CHECK(r.piie == r.ey - r.psi);
  CHECK(r.ci_lower < r.piie);
  CHECK(r.ci_upper > r.piie);
  CHECK(std::abs((r.ci_upper - r.piie) - (r.piie - r.ci_lower)) < 1e-12);
  CHECK(r.n == 1000);
  options.variance = VarianceMethod::closed_form;
  CHECK(code_of([&] { estimate_piie(data, scenario_config('a', Method::dr), options); }) == ErrorCode::unsupported_model);
  CHECK_NOTHROW(estimate_piie(data, scenario_config('a', Method::mle_alt), options));
}
