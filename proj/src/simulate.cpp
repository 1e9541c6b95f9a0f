#include "piie/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "piie/inference.hpp"
#include "piie/parallel.hpp"

namespace piie {

namespace {

// Running mean and variance (Welford).
struct Moments {
  double count = 0.0, mean = 0.0, m2 = 0.0;

  void add(double x) {
    count += 1.0;
    const double d = x - mean;
    mean += d / count;
    m2 += d * (x - mean);
  }
  double variance() const { return count > 1.0 ? m2 / (count - 1.0) : 0.0; }
  double se() const { return count > 0.0 ? std::sqrt(variance() / count) : 0.0; }
};

bool probability(double p) { return std::isfinite(p) && p > 0.0 && p < 1.0; }

template <std::size_t N>
bool all_finite(const std::array<double, N>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct StructuralDraw {
  double a = 0.0;
  double y = 0.0;        // Y(A, Z(A))
  double y_cross = 0.0;  // Y(A, Z(a*))
  double y_star = 0.0;   // Y(a*, Z(a*))
  double y1 = 0.0, y0 = 0.0;
  double inner = 0.0;    // E(Y | A, z = E[Z(a*) | C], C)
};

class StructuralSampler {
 public:
  StructuralSampler(const DgpParams& params, std::uint64_t seed) : p_(params), rng_(seed) {}

  StructuralDraw draw(int a_star) {
    const double c1 = bern(p_.p_c1);
    const double c2 = bern(p_.c2_probability(c1));
    const double c3 = bern(p_.p_c3);
    const double u = p_.confounded ? bern(p_.confounder_prob) : 0.0;
    const double a = bern(p_.exposure_probability(c1, c2, c3, u));
    const double ez = std::sqrt(p_.mediator_variance) * normal_(rng_);
    const double ey = std::sqrt(p_.outcome_variance) * normal_(rng_);

    auto z_of = [&](double x) { return p_.mediator_mean(x, c1, c2) + ez; };
    auto y_of = [&](double x, double z) { return p_.outcome_mean(x, z, c1, c2, c3, u) + ey; };
    const double as = a_star;
    StructuralDraw d;
    d.a = a;
    d.y = y_of(a, z_of(a));
    d.y_cross = y_of(a, z_of(as));
    d.y_star = y_of(as, z_of(as));
    d.y1 = y_of(1.0, z_of(1.0));
    d.y0 = y_of(0.0, z_of(0.0));
    d.inner = p_.outcome_mean(a, p_.mediator_mean(as, c1, c2), c1, c2, c3, u);
    return d;
  }

 private:
  double bern(double p) { return uniform_(rng_) < p ? 1.0 : 0.0; }

  const DgpParams& p_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

void check_a_star(int a_star) {
  if (a_star != 0 && a_star != 1) throw Error(ErrorCode::invalid_argument, "a_star must be 0 or 1");
}

}  // namespace

void DgpParams::validate() const {
  if (!probability(p_c1) || !probability(p_c3)) throw Error(ErrorCode::invalid_argument, "covariate probabilities must lie in (0, 1)");
  if (confounded && !probability(confounder_prob)) {
    throw Error(ErrorCode::invalid_argument, "confounder probability must lie in (0, 1)");
  }
  if (!(mediator_variance > 0.0) || !(outcome_variance > 0.0) || !std::isfinite(mediator_variance) ||
      !std::isfinite(outcome_variance)) {
    throw Error(ErrorCode::invalid_argument, "variances must be positive and finite");
  }
  if (!all_finite(c2_logit) || !all_finite(exposure_logit) || !all_finite(mediator_coef) || !all_finite(outcome_coef) ||
      !std::isfinite(confounder_exposure_loading) || !std::isfinite(confounder_outcome_loading)) {
    throw Error(ErrorCode::invalid_argument, "coefficients must be finite");
  }
}

double DgpParams::c2_probability(double c1) const { return expit(c2_logit[0] + c2_logit[1] * c1); }

double DgpParams::exposure_probability(double c1, double c2, double c3, double u) const {
  const auto& g = exposure_logit;
  double eta = g[0] + g[1] * c1 + g[2] * c2 + g[3] * c1 * c2 + g[4] * c3;
  if (confounded) eta += confounder_exposure_loading * u;
  return expit(eta);
}

double DgpParams::mediator_mean(double a, double c1, double c2) const {
  const auto& b = mediator_coef;
  return b[0] + b[1] * a + b[2] * c1 + b[3] * c2 + b[4] * c1 * c2;
}

double DgpParams::outcome_mean(double a, double z, double c1, double c2, double c3, double u) const {
  const auto& t = outcome_coef;
  const double t_a = direct_effect_off ? 0.0 : t[1];
  const double t_az = direct_effect_off ? 0.0 : t[3];
  double m = t[0] + t_a * a + t[2] * z + t_az * a * z + t[4] * c1 + t[5] * c2 + t[6] * c1 * c2 + t[7] * c3;
  if (confounded) m += confounder_outcome_loading * u;
  return m;
}

Dataset generate_dgp(const DgpParams& params, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::invalid_argument, "n must be at least 1");
  params.validate();
  std::vector<std::vector<double>> cols(6, std::vector<double>(n));
  auto& a = cols[1];
  auto& z = cols[2];
  auto& c1 = cols[3];
  auto& c2 = cols[4];
  auto& c3 = cols[5];
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sz = std::sqrt(params.mediator_variance);
  const double sy = std::sqrt(params.outcome_variance);
  for (std::size_t i = 0; i < n; ++i) {
    c1[i] = uniform(rng) < params.p_c1 ? 1.0 : 0.0;
    c2[i] = uniform(rng) < params.c2_probability(c1[i]) ? 1.0 : 0.0;
    c3[i] = uniform(rng) < params.p_c3 ? 1.0 : 0.0;
    const double u = params.confounded ? (uniform(rng) < params.confounder_prob ? 1.0 : 0.0) : 0.0;
    a[i] = uniform(rng) < params.exposure_probability(c1[i], c2[i], c3[i], u) ? 1.0 : 0.0;
    z[i] = params.mediator_mean(a[i], c1[i], c2[i]) + sz * normal(rng);
    cols[0][i] = params.outcome_mean(a[i], z[i], c1[i], c2[i], c3[i], u) + sy * normal(rng);
  }
  Roles roles{"y", "a", "z", {"c1", "c2", "c3"}};
  return Dataset({"y", "a", "z", "c1", "c2", "c3"}, std::move(cols), std::move(roles));
}

ExactTruth exact_truth(const DgpParams& params, int a_star) {
  check_a_star(a_star);
  params.validate();
  ExactTruth t;
  const int u_levels = params.confounded ? 2 : 1;
  for (int c1 = 0; c1 < 2; ++c1) {
    for (int c2 = 0; c2 < 2; ++c2) {
      for (int c3 = 0; c3 < 2; ++c3) {
        for (int u = 0; u < u_levels; ++u) {
          const double p2 = params.c2_probability(c1);
          double w = (c1 ? params.p_c1 : 1.0 - params.p_c1) * (c2 ? p2 : 1.0 - p2) *
                     (c3 ? params.p_c3 : 1.0 - params.p_c3);
          if (params.confounded) w *= u ? params.confounder_prob : 1.0 - params.confounder_prob;
          const double pa = params.exposure_probability(c1, c2, c3, u);
          const double z_star = params.mediator_mean(a_star, c1, c2);
          t.ey_a_star += w * params.outcome_mean(a_star, z_star, c1, c2, c3, u);
          for (int a = 0; a < 2; ++a) {
            const double wa = w * (a ? pa : 1.0 - pa);
            t.pr_a1 += a ? wa : 0.0;
            t.ey += wa * params.outcome_mean(a, params.mediator_mean(a, c1, c2), c1, c2, c3, u);
            t.psi += wa * params.outcome_mean(a, z_star, c1, c2, c3, u);
          }
        }
      }
    }
  }
  t.piie = t.ey - t.psi;
  t.pie = t.ey - t.ey_a_star;
  t.pide = t.psi - t.ey_a_star;
  return t;
}

OracleTruth oracle_truth(const DgpParams& params, int a_star, std::size_t draws, std::uint64_t seed) {
  check_a_star(a_star);
  params.validate();
  if (draws < 2) throw Error(ErrorCode::invalid_argument, "oracle needs at least 2 draws");
  StructuralSampler sampler(params, seed);
  Moments psi, psi_sim, piie, pie, pide, ey;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto d = sampler.draw(a_star);
    psi.add(d.inner);
    psi_sim.add(d.y_cross);
    piie.add(d.y - d.y_cross);
    pie.add(d.y - d.y_star);
    pide.add(d.y_cross - d.y_star);
    ey.add(d.y);
  }
  OracleTruth t;
  t.draws = draws;
  t.psi = psi.mean;
  t.psi_se = psi.se();
  t.psi_simulated = psi_sim.mean;
  t.psi_simulated_se = psi_sim.se();
  t.piie = piie.mean;
  t.piie_se = piie.se();
  t.pie = pie.mean;
  t.pie_se = pie.se();
  t.pide = pide.mean;
  t.pide_se = pide.se();
  t.ey = ey.mean;
  t.ey_se = ey.se();
  return t;
}

double brute_force_psi(std::span<const DiscreteCell> joint, int a_star) {
  check_a_star(a_star);
  if (joint.empty()) throw Error(ErrorCode::empty_dataset, "joint distribution has no cells");
  using Key = std::vector<double>;
  std::map<Key, double> p_c, p_ac, p_azc, y_azc;
  std::map<Key, std::vector<double>> z_given_c;  // support of z per c
  double total = 0.0;
  for (const auto& cell : joint) {
    if (!(cell.prob >= 0.0) || !std::isfinite(cell.prob)) throw Error(ErrorCode::invalid_argument, "cell probabilities must be non-negative");
    if (cell.a != 0.0 && cell.a != 1.0) throw Error(ErrorCode::non_binary_exposure, "exposure must be 0 or 1");
    if (cell.c.size() != joint.front().c.size()) throw Error(ErrorCode::dimension_mismatch, "cells differ in covariate count");
    total += cell.prob;
    Key ac{cell.a};
    ac.insert(ac.end(), cell.c.begin(), cell.c.end());
    Key azc{cell.a, cell.z};
    azc.insert(azc.end(), cell.c.begin(), cell.c.end());
    p_c[cell.c] += cell.prob;
    p_ac[ac] += cell.prob;
    p_azc[azc] += cell.prob;
    y_azc[azc] += cell.prob * cell.y;
    auto& zs = z_given_c[cell.c];
    if (std::find(zs.begin(), zs.end(), cell.z) == zs.end()) zs.push_back(cell.z);
  }
  if (!(total > 0.0)) throw Error(ErrorCode::positivity, "joint distribution has zero total mass");

  auto prob = [](const std::map<Key, double>& m, const Key& k) {
    const auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
  };
  double psi = 0.0;
  for (const auto& [c, pc] : p_c) {
    if (pc <= 0.0) continue;
    Key sc{static_cast<double>(a_star)};
    sc.insert(sc.end(), c.begin(), c.end());
    const double p_star_c = prob(p_ac, sc);
    if (p_star_c <= 0.0) throw Error(ErrorCode::positivity, "Pr(A = a*, C = c) is zero for a covariate stratum");
    for (double z : z_given_c[c]) {
      Key szc{static_cast<double>(a_star), z};
      szc.insert(szc.end(), c.begin(), c.end());
      const double pz = prob(p_azc, szc) / p_star_c;
      if (pz <= 0.0) continue;
      double inner = 0.0;
      for (double a : {0.0, 1.0}) {
        Key ack{a};
        ack.insert(ack.end(), c.begin(), c.end());
        const double pac = prob(p_ac, ack);
        if (pac <= 0.0) continue;
        Key azc{a, z};
        azc.insert(azc.end(), c.begin(), c.end());
        const double pazc = prob(p_azc, azc);
        if (pazc <= 0.0) throw Error(ErrorCode::positivity, "E(Y | a, z, c) is undefined: Pr(A = a, Z = z, C = c) is zero");
        inner += prob(y_azc, azc) / pazc * (pac / pc);
      }
      psi += pz * inner * (pc / total);
    }
  }
  return psi;
}

Dataset dataset_from_cells(std::span<const DiscreteCell> cells, std::span<const std::size_t> counts,
                           const std::vector<std::string>& covariates) {
  if (cells.size() != counts.size()) throw Error(ErrorCode::dimension_mismatch, "one count per cell is required");
  std::vector<std::vector<double>> cols(3 + covariates.size());
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (cells[k].c.size() != covariates.size()) throw Error(ErrorCode::dimension_mismatch, "cell covariate count differs from names");
    for (std::size_t r = 0; r < counts[k]; ++r) {
      cols[0].push_back(cells[k].y);
      cols[1].push_back(cells[k].a);
      cols[2].push_back(cells[k].z);
      for (std::size_t j = 0; j < covariates.size(); ++j) cols[3 + j].push_back(cells[k].c[j]);
    }
  }
  std::vector<std::string> names{"y", "a", "z"};
  names.insert(names.end(), covariates.begin(), covariates.end());
  return Dataset(std::move(names), std::move(cols), Roles{"y", "a", "z", covariates});
}

ScenarioSpec scenario(char id) {
  const char* outcome_full = "y ~ a + z + a:z + c1 + c2 + c1:c2 + c3";
  const char* mediator_full = "z ~ a + c1 + c2 + c1:c2";
  const char* propensity_full = "a ~ c1 + c2 + c1:c2 + c3";
  ScenarioSpec s;
  s.id = id;
  switch (id) {
    case 'a':
      s.label = "all models correct";
      s.outcome = parse_formula(outcome_full);
      s.mediator = parse_formula(mediator_full);
      s.propensity = parse_formula(propensity_full);
      break;
    case 'b':
      s.label = "c3 omitted from outcome and propensity models";
      s.outcome = parse_formula("y ~ a + z + a:z + c1 + c2 + c1:c2");
      s.mediator = parse_formula(mediator_full);
      s.propensity = parse_formula("a ~ c1 + c2 + c1:c2");
      break;
    case 'c':
      s.label = "only the mediator model correct";
      s.outcome = parse_formula("y ~ a + z + c1 + c2 + c1:c2 + c3");
      s.mediator = parse_formula(mediator_full);
      s.propensity = parse_formula("a ~ c1");
      break;
    case 'd':
      s.label = "only the outcome and propensity models correct";
      s.outcome = parse_formula(outcome_full);
      s.mediator = parse_formula("z ~ a + c1");
      s.propensity = parse_formula(propensity_full);
      break;
    default:
      throw Error(ErrorCode::invalid_argument, std::string("unknown scenario '") + id + "' (expected a, b, c or d)");
  }
  return s;
}

std::vector<ScenarioSpec> all_scenarios() { return {scenario('a'), scenario('b'), scenario('c'), scenario('d')}; }

bool OCRow::biased() const { return std::abs(prop_bias) > 0.1; }

void OCTable::append(const OCTable& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  replicates.insert(replicates.end(), other.replicates.begin(), other.replicates.end());
}

OCTable run_operating_characteristics(const ScenarioSpec& spec, std::span<const Method> estimators,
                                      const OCOptions& options) {
  if (options.reps < 1) throw Error(ErrorCode::invalid_argument, "reps must be at least 1");
  if (estimators.empty()) throw Error(ErrorCode::invalid_argument, "no estimators requested");
  options.params.validate();
  const auto truth = exact_truth(options.params, options.a_star);
  const double crit = normal_quantile(0.5 * (1.0 + options.level));

  EstimationConfig base;
  base.a_star = options.a_star;
  base.outcome_formula = spec.outcome;
  base.mediator_formula = spec.mediator;
  base.propensity_formula = spec.propensity;
  base.mediator_family = MediatorFamily::gaussian;
  ModelNeeds needs;
  for (Method m : estimators) needs = needs | needs_of(m);

  const std::size_t M = estimators.size();
  std::vector<ReplicateRecord> records(options.reps * M);
  parallel_for(options.reps, options.threads, [&](std::size_t r) {
    for (std::size_t k = 0; k < M; ++k) {
      auto& rec = records[r * M + k];
      rec.scenario = spec.id;
      rec.rep = r;
      rec.estimator = estimators[k];
    }
    const auto data = generate_dgp(options.params, options.n, derive_seed(options.master_seed, r));
    NuisanceSet nuisance;
    try {
      nuisance = fit_nuisances(data, base, needs);
    } catch (const Error&) {
      return;
    }
    const auto y = data.outcome();
    const double ey = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    for (std::size_t k = 0; k < M; ++k) {
      auto& rec = records[r * M + k];
      try {
        EstimationConfig config = base;
        config.method = estimators[k];
        const auto est = estimate_psi(data, config, nuisance);
        const auto var = sandwich_variance(build_stacked_system(data, config, est));
        rec.psi = est.psi;
        rec.piie = ey - est.psi;
        rec.variance = var.piie_variance.value_or(0.0);
        rec.covered = std::abs(rec.piie - truth.piie) <= crit * std::sqrt(rec.variance);
        rec.ok = std::isfinite(rec.psi) && std::isfinite(rec.variance);
      } catch (const Error&) {
        rec.ok = false;
      }
    }
  });

  OCTable table;
  for (std::size_t k = 0; k < M; ++k) {
    Moments psi, piie, var;
    double covered = 0.0;
    std::size_t failures = 0;
    for (std::size_t r = 0; r < options.reps; ++r) {
      const auto& rec = records[r * M + k];
      if (!rec.ok) {
        ++failures;
        continue;
      }
      psi.add(rec.psi);
      piie.add(rec.piie);
      var.add(rec.variance);
      covered += rec.covered ? 1.0 : 0.0;
    }
    OCRow row;
    row.scenario = spec.id;
    row.estimator = estimators[k];
    row.true_psi = truth.psi;
    row.true_piie = truth.piie;
    row.reps = options.reps - failures;
    row.failures = failures;
    row.n = options.n;
    row.master_seed = options.master_seed;
    row.flagged = static_cast<double>(failures) > 0.01 * static_cast<double>(options.reps);
    if (row.reps > 0) {
      row.mean_psi = psi.mean;
      row.mean_piie = piie.mean;
      row.mc_variance = piie.variance();
      row.mean_estimated_variance = var.mean;
      row.prop_bias = (piie.mean - truth.piie) / truth.piie;
      row.coverage = covered / static_cast<double>(row.reps);
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.mean_psi = row.mean_piie = row.mc_variance = row.mean_estimated_variance = row.prop_bias = row.coverage = nan;
    }
    table.rows.push_back(row);
  }
  table.replicates = std::move(records);
  return table;
}

bool IdentityCheck::holds(double k) const { return std::abs(lhs - rhs) <= k * se; }

bool DecompositionReport::all_hold(double k) const {
  return std::all_of(checks.begin(), checks.end(), [k](const IdentityCheck& c) { return c.holds(k); });
}

DecompositionReport decomposition_check(const DgpParams& params, std::size_t draws, std::uint64_t seed) {
  params.validate();
  if (draws < 2) throw Error(ErrorCode::invalid_argument, "decomposition check needs at least 2 draws");

  // Threshold for the binary outcome: median of Y in a pilot stream.
  std::vector<double> pilot(std::min<std::size_t>(draws, 200000));
  {
    StructuralSampler sampler(params, derive_seed(seed, 2));
    for (auto& y : pilot) y = sampler.draw(0).y;
    std::nth_element(pilot.begin(), pilot.begin() + static_cast<std::ptrdiff_t>(pilot.size() / 2), pilot.end());
  }
  const double threshold = pilot[pilot.size() / 2];

  struct Stream {
    Moments pie, piie, pide, ey, pr, ett, treated_effect, yb, pie_b;
    double cross_dy = 0.0;  // running sum for cov(d_b, y_b)
  };
  auto run = [&](std::uint64_t s) {
    StructuralSampler sampler(params, s);
    Stream st;
    for (std::size_t i = 0; i < draws; ++i) {
      const auto d = sampler.draw(0);
      st.pie.add(d.y - d.y_star);
      st.piie.add(d.y - d.y_cross);
      st.pide.add(d.y_cross - d.y_star);
      st.ey.add(d.y);
      st.pr.add(d.a);
      if (d.a == 1.0) st.ett.add(d.y1 - d.y0);
      st.treated_effect.add(d.a * (d.y1 - d.y0));
      const double yb = d.y > threshold ? 1.0 : 0.0;
      const double yb0 = d.y_star > threshold ? 1.0 : 0.0;
      st.yb.add(yb);
      st.pie_b.add(yb - yb0);
      st.cross_dy += (yb - yb0) * yb;
    }
    return st;
  };
  const Stream s1 = run(derive_seed(seed, 0));
  const Stream s2 = run(derive_seed(seed, 1));

  DecompositionReport r;
  r.draws = draws;
  r.pie = s1.pie.mean;
  r.pie_se = s1.pie.se();
  r.piie = s1.piie.mean;
  r.piie_se = s1.piie.se();
  r.pide = s1.pide.mean;
  r.pide_se = s1.pide.se();
  r.ey = s1.ey.mean;
  r.ey_se = s1.ey.se();
  r.pr_a1 = s1.pr.mean;
  r.pr_a1_se = s1.pr.se();
  r.ett = s1.ett.mean;
  r.ett_se = s1.ett.se();
  r.threshold = threshold;
  r.pie_binary = s1.pie_b.mean;
  r.pie_binary_se = s1.pie_b.se();

  // AF and E[Y*] come from the second stream.
  const double nd = static_cast<double>(draws);
  r.ey_binary = s2.yb.mean;
  r.ey_binary_se = s2.yb.se();
  r.af = s2.pie_b.mean / s2.yb.mean;
  {
    const double cov = (s2.cross_dy - nd * s2.pie_b.mean * s2.yb.mean) / (nd - 1.0);
    const double var = (s2.pie_b.variance() - 2.0 * r.af * cov + r.af * r.af * s2.yb.variance()) /
                       (s2.yb.mean * s2.yb.mean * nd);
    r.af_se = std::sqrt(std::max(0.0, var));
  }

  auto combine = [](double a, double b) { return std::sqrt(a * a + b * b); };
  // ETT(s2) * Pr(A = 1)(s2) equals the mean of A (Y(1) - Y(0)) in s2 exactly.
  r.checks.push_back({"PIE(0) = ETT * Pr(A=1)", s1.pie.mean, s2.ett.mean * s2.pr.mean,
                      combine(s1.pie.se(), s2.treated_effect.se())});
  r.checks.push_back({"PIE = PIIE + PIDE", s1.pie.mean, s2.piie.mean + s2.pide.mean,
                      combine(s1.pie.se(), s2.pie.se())});
  r.checks.push_back({"AF * E[Y] = PIE (binary outcome)", s1.pie_b.mean, r.af * r.ey_binary,
                      combine(s1.pie_b.se(), s2.pie_b.se())});
  if (params.direct_effect_off) {
    r.checks.push_back({"PIIE = PIE (no direct effect)", s1.piie.mean, s2.pie.mean,
                        combine(s1.piie.se(), s2.pie.se())});
    r.checks.push_back({"PIDE = 0 (no direct effect)", s1.pide.mean, 0.0, s1.pide.se()});
  }
  return r;
}

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::syntax, "config line " + std::to_string(lineno) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::syntax, "config line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

namespace {

double parse_number(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::invalid_argument, "config key '" + key + "': '" + text + "' is not a finite number");
  }
  return v;
}

template <std::size_t N>
std::array<double, N> parse_list(const std::string& key, const std::string& text) {
  std::array<double, N> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t k = 0;
  while (std::getline(ss, item, ',')) {
    if (k == N) break;
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    out[k++] = parse_number(key, b == std::string::npos ? std::string() : item.substr(b, e - b + 1));
  }
  if (k != N || std::getline(ss, item, ',')) {
    throw Error(ErrorCode::invalid_argument, "config key '" + key + "' needs " + std::to_string(N) + " comma-separated values");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error(ErrorCode::invalid_argument, "config key '" + key + "' must be true or false");
}

}  // namespace

void apply_overrides(DgpParams& params, std::map<char, ScenarioSpec>& scenarios,
                     const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    if (key == "p_c1") params.p_c1 = parse_number(key, value);
    else if (key == "p_c3") params.p_c3 = parse_number(key, value);
    else if (key == "c2_logit") params.c2_logit = parse_list<2>(key, value);
    else if (key == "exposure_logit") params.exposure_logit = parse_list<5>(key, value);
    else if (key == "mediator_coef") params.mediator_coef = parse_list<5>(key, value);
    else if (key == "mediator_variance") params.mediator_variance = parse_number(key, value);
    else if (key == "outcome_coef") params.outcome_coef = parse_list<8>(key, value);
    else if (key == "outcome_variance") params.outcome_variance = parse_number(key, value);
    else if (key == "direct_effect_off") params.direct_effect_off = parse_bool(key, value);
    else if (key == "confounded") params.confounded = parse_bool(key, value);
    else if (key == "confounder_prob") params.confounder_prob = parse_number(key, value);
    else if (key == "confounder_exposure_loading") params.confounder_exposure_loading = parse_number(key, value);
    else if (key == "confounder_outcome_loading") params.confounder_outcome_loading = parse_number(key, value);
    else if (key.size() > 11 && key.starts_with("scenario.") && key[10] == '.') {
      const char id = key[9];
      auto it = scenarios.find(id);
      if (it == scenarios.end()) it = scenarios.emplace(id, scenario(id)).first;
      const auto field = key.substr(11);
      auto formula = parse_formula(value);
      if (field == "outcome") it->second.outcome = std::move(formula);
      else if (field == "mediator") it->second.mediator = std::move(formula);
      else if (field == "propensity") it->second.propensity = std::move(formula);
      else throw Error(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
    } else {
      throw Error(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
    }
  }
  params.validate();
}

}  // namespace piie
