#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "piie/inference.hpp"
#include "piie/simulate.hpp"

using namespace piie;

namespace {

EstimationConfig scenario_config(char id, Method method) {
  const auto s = scenario(id);
  EstimationConfig c;
  c.method = method;
  c.outcome_formula = s.outcome;
  c.mediator_formula = s.mediator;
  c.propensity_formula = s.propensity;
  return c;
}

Dataset permuted(const Dataset& d, std::uint64_t seed) {
  std::vector<std::size_t> rows(d.rows());
  std::iota(rows.begin(), rows.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  return d.resample(rows);
}

}  // namespace

TEST_CASE("nuisance-free sandwich is the variance of the mean") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(3.0, 2.0);
  Eigen::VectorXd s(500);
  for (auto& v : s) v = nd(rng);
  StackedSystem sys;
  sys.blocks.push_back({"psi", 0, 1});
  sys.solution = Eigen::VectorXd::Constant(1, s.mean());
  sys.scores = [s](const Eigen::VectorXd& x) { return Eigen::MatrixXd((s.array() - x[0]).matrix()); };
  const auto r = sandwich_variance(sys);
  const double n = static_cast<double>(s.size());
  const double direct = (s.array() - s.mean()).square().sum() / (n * n);
  CHECK(std::abs(r.psi_variance - direct) <= 1e-10 * direct + 1e-15);
  CHECK_FALSE(r.piie_variance.has_value());
}

TEST_CASE("sp1 with the mediator block removed reduces to var(contributions) / n") {
  const auto data = generate_dgp(DgpParams{}, 1000, 3);
  const auto config = scenario_config('a', Method::sp1);
  const auto est = estimate_psi(data, config);
  auto full = build_stacked_system(data, config, est);
  const auto* beta = full.find("beta");
  const auto* sigma = full.find("sigma2_z");
  REQUIRE(beta);
  REQUIRE(sigma);
  const auto* psi = full.find("psi");
  const Eigen::Index ip = psi->offset;
  StackedSystem reduced;
  reduced.blocks.push_back({"psi", 0, 1});
  reduced.solution = Eigen::VectorXd::Constant(1, full.solution[ip]);
  reduced.scores = [full, ip](const Eigen::VectorXd& x) {
    Eigen::VectorXd point = full.solution;
    point[ip] = x[0];
    return Eigen::MatrixXd(full.scores(point).col(ip));
  };
  const auto r = sandwich_variance(reduced);
  const double n = 1000.0;
  const double direct = (est.contributions.array() - est.psi).square().sum() / (n * n);
  CHECK(std::abs(r.psi_variance - direct) <= 1e-10 * direct);
}

TEST_CASE("stacked scores vanish at the solution") {
  const auto data = generate_dgp(DgpParams{}, 1500, 4);
  for (Method m : {Method::mle, Method::mle_alt, Method::sp1, Method::sp2, Method::dr}) {
    const auto config = scenario_config('a', m);
    const auto est = estimate_psi(data, config);
    const auto sys = build_stacked_system(data, config, est);
    const Eigen::VectorXd means = sys.scores(sys.solution).colwise().mean().transpose();
    CHECK_MESSAGE(means.cwiseAbs().maxCoeff() <= 1e-6, to_string(m));
    CHECK(std::abs(means[sys.find("psi")->offset]) <= 1e-12);
  }
}

TEST_CASE("sandwich variance is invariant to row order") {
  const auto data = generate_dgp(DgpParams{}, 1000, 5);
  const auto shuffled = permuted(data, 9);
  for (Method m : {Method::mle_alt, Method::sp1, Method::sp2, Method::dr}) {
    const auto config = scenario_config('a', m);
    const auto v1 = sandwich_variance(build_stacked_system(data, config, estimate_psi(data, config)));
    const auto v2 = sandwich_variance(build_stacked_system(shuffled, config, estimate_psi(shuffled, config)));
    CHECK(std::abs(*v1.piie_variance - *v2.piie_variance) <= 1e-9 * *v1.piie_variance);
  }
}

TEST_CASE("singular bread is reported with its block") {
  StackedSystem sys;
  sys.blocks = {{"theta", 0, 1}, {"psi", 1, 1}};
  sys.solution = Eigen::Vector2d(0.0, 0.0);
  sys.scores = [](const Eigen::VectorXd& x) {
    Eigen::MatrixXd U(3, 2);
    U.col(0).setConstant(0.0 * x[0]);
    U.col(1).setConstant(-x[1]);
    return U;
  };
  try {
    sandwich_variance(sys);
    FAIL("expected singular bread");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::singular_design);
    CHECK(std::string(e.what()).find("theta") != std::string::npos);
  }
}

TEST_CASE("bootstrap is deterministic and independent of the worker count") {
  const auto data = generate_dgp(DgpParams{}, 400, 6);
  const auto config = scenario_config('a', Method::dr);
  const auto one = bootstrap_variance(data, config, {60, 42, 1});
  const auto again = bootstrap_variance(data, config, {60, 42, 1});
  const auto four = bootstrap_variance(data, config, {60, 42, 4});
  CHECK(one.psi_replicates == again.psi_replicates);
  CHECK(one.psi_replicates == four.psi_replicates);
  CHECK(one.piie_variance == four.piie_variance);
  CHECK(one.B == 60);
  CHECK(*one.piie_variance == doctest::Approx(oracle::sample_variance(one.piie_replicates)).epsilon(1e-12));
  const auto other = bootstrap_variance(data, config, {60, 43, 1});
  CHECK(other.psi_replicates != one.psi_replicates);
}

TEST_CASE("bootstrap of a constant outcome has zero variance") {
  const auto base = generate_dgp(DgpParams{}, 300, 7);
  std::vector<std::vector<double>> cols;
  for (const auto& n : base.column_names()) {
    const auto c = base.column(n);
    cols.emplace_back(c.begin(), c.end());
  }
  std::fill(cols[0].begin(), cols[0].end(), 5.0);
  const Dataset flat(base.column_names(), std::move(cols), base.roles());
  for (Method m : {Method::mle_alt, Method::dr}) {
    const auto r = bootstrap_variance(flat, scenario_config('a', m), {50, 1, 1});
    CHECK(r.psi_variance <= 1e-20);
    CHECK(*r.piie_variance <= 1e-20);
  }
}

TEST_CASE("bootstrap agrees with the sandwich at n = 1000") {
  const auto data = generate_dgp(DgpParams{}, 1000, 8);
  for (Method m : {Method::dr, Method::sp1}) {
    const auto config = scenario_config('a', m);
    const auto sandwich = sandwich_variance(build_stacked_system(data, config, estimate_psi(data, config)));
    const auto boot = bootstrap_variance(data, config, {500, 123, 1});
    CHECK_MESSAGE(std::abs(*boot.piie_variance / *sandwich.piie_variance - 1.0) < 0.25, to_string(m));
  }
}

TEST_CASE("too many failed resamples is an error") {
  // Six rows with exposure 1 in one row: most resamples have constant exposure.
  const Dataset d({"y", "a", "z", "c1"},
                  {{1, 2, 3, 4, 5, 6}, {1, 0, 0, 0, 0, 0}, {1, 3, 2, 5, 4, 6}, {0, 1, 0, 1, 0, 1}},
                  Roles{"y", "a", "z", {"c1"}});
  EstimationConfig config;
  config.method = Method::sp1;
  config.mediator_formula = parse_formula("z ~ a");
  try {
    bootstrap_variance(d, config, {100, 1, 1});
    FAIL("expected resample failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::resample_failure);
  }
}

TEST_CASE("wald intervals and normal quantiles") {
  const auto [lo, hi] = wald_ci(0.0, 1.0, 0.95);
  CHECK(lo == doctest::Approx(-1.959963984540054).epsilon(1e-12));
  CHECK(hi == doctest::Approx(1.959963984540054).epsilon(1e-12));
  const auto [l0, h0] = wald_ci(2.5, 0.0, 0.9);
  CHECK(l0 == 2.5);
  CHECK(h0 == 2.5);
  CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
  CHECK_THROWS_AS(wald_ci(0.0, -1.0, 0.95), Error);
  CHECK_THROWS_AS(wald_ci(0.0, 1.0, 1.0), Error);
}

TEST_CASE("comparison test") {
  const auto data = generate_dgp(DgpParams{}, 600, 10);
  const auto config = scenario_config('a', Method::dr);
  const Method self[] = {Method::dr};
  const auto r = hausman_compare(data, config, self, {100, 5, 1});
  CHECK(r[0].diff == 0.0);
  CHECK(r[0].p_value == 1.0);

  const Method methods[] = {Method::mle_alt, Method::sp1, Method::sp2};
  const auto all = hausman_compare(data, config, methods, {100, 5, 1});
  const auto threaded = hausman_compare(data, config, methods, {100, 5, 3});
  REQUIRE(all.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(all[k].p_value >= 0.0);
    CHECK(all[k].p_value <= 1.0);
    CHECK(all[k].B == 100);
    CHECK(all[k].seed == 5);
    CHECK(all[k].se_diff == threaded[k].se_diff);
    CHECK(all[k].diff == doctest::Approx(all[k].psi_method - all[k].psi_dr));
  }
  auto single = config;
  single.method = Method::sp2;
  CHECK(hausman_compare(data, single, {100, 5, 1}).p_value == all[2].p_value);
  const Method bad[] = {Method::closed_form};
  CHECK_THROWS_AS(hausman_compare(data, config, bad, {100, 5, 1}), Error);
}
