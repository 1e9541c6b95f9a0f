#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "piie/parallel.hpp"

namespace piie::cli {

namespace {

using nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool wants_json(std::span<const std::string> args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--format=json") return true;
    if (args[i] == "--format" && i + 1 < args.size() && args[i + 1] == "json") return true;
  }
  return false;
}

int report_error(std::span<const std::string> args, std::ostream& out, std::ostream& err, int code,
                 std::string_view kind, const std::string& message) {
  err << "error: " << message << "\n";
  if (wants_json(args)) {
    ordered_json j;
    j["error"] = {{"code", kind}, {"message", message}};
    j["exit_code"] = code;
    out << j.dump(2) << "\n";
  }
  return code;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string csv_num(double v) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += sep;
    s += items[i];
  }
  return s;
}

// Runs CLI11 over args with a synthetic program name. Returns an exit code
// when parsing ended the command (help or usage error).
std::optional<int> parse(CLI::App& app, std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{app.get_name().c_str()};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    return report_error(args, out, err, usage_failure, "usage", e.what());
  }
  return std::nullopt;
}

struct ModelFlags {
  std::string data;
  std::string outcome, exposure, mediator, covariates;
  std::string y_model, z_model, a_model;
  std::string z_family;
  std::string one_hot;
  int a_star = 0;
  double propensity_floor = 1e-8;
  bool truncate = false;
  std::string format = "table";
  unsigned threads = 1;
};

void add_model_flags(CLI::App& app, ModelFlags& f) {
  f.threads = default_threads();
  app.add_option("--data", f.data, "CSV file with a header row")->required()->check(CLI::ExistingFile);
  app.add_option("--outcome", f.outcome, "outcome column")->required();
  app.add_option("--exposure", f.exposure, "binary exposure column")->required();
  app.add_option("--mediator", f.mediator, "mediator column")->required();
  app.add_option("--covariates", f.covariates, "comma-separated covariate columns");
  app.add_option("--y-model", f.y_model, "outcome regression formula");
  app.add_option("--z-model", f.z_model, "mediator regression formula");
  app.add_option("--a-model", f.a_model, "propensity (logistic) formula");
  app.add_option("--z-family", f.z_family, "mediator family; inferred from the data when omitted")
      ->check(CLI::IsMember({"gaussian", "bernoulli"}));
  app.add_option("--one-hot", f.one_hot, "comma-separated categorical covariates to expand into indicators");
  app.add_option("--a-star", f.a_star, "reference exposure level")->check(CLI::IsMember({0, 1}))->capture_default_str();
  app.add_option("--propensity-floor", f.propensity_floor, "smallest admissible propensity")->capture_default_str();
  app.add_flag("--truncate", f.truncate, "clamp propensities to the floor instead of failing");
  app.add_option("--format", f.format, "output format")->check(CLI::IsMember({"json", "csv", "table"}))->capture_default_str();
  app.add_option("--threads", f.threads, "worker threads (default: PIIE_THREADS or all cores)")->check(CLI::PositiveNumber);
}

// Replaces any factor naming an expanded categorical column by its indicators.
FormulaSpec expand_one_hot(const FormulaSpec& spec, const Dataset& data, const std::vector<std::string>& sources,
                           const std::vector<std::string>& original_covariates) {
  FormulaSpec out = spec;
  out.terms.clear();
  for (const auto& term : spec.terms) {
    std::vector<std::vector<std::string>> expanded{{}};
    for (const auto& factor : term.factors) {
      std::vector<std::string> options{factor};
      if (std::find(sources.begin(), sources.end(), factor) != sources.end()) {
        options.clear();
        for (const auto& c : data.roles().covariates) {
          const bool original = std::find(original_covariates.begin(), original_covariates.end(), c) != original_covariates.end();
          if (!original && c.starts_with(factor + "_")) options.push_back(c);
        }
      }
      std::vector<std::vector<std::string>> next;
      for (const auto& partial : expanded) {
        for (const auto& o : options) {
          auto p = partial;
          p.push_back(o);
          next.push_back(std::move(p));
        }
      }
      expanded = std::move(next);
    }
    for (auto& factors : expanded) {
      std::sort(factors.begin(), factors.end());
      Term t{factors};
      if (std::find(out.terms.begin(), out.terms.end(), t) == out.terms.end()) out.terms.push_back(std::move(t));
    }
  }
  return out;
}

struct Prepared {
  Dataset data;
  EstimationConfig config;
};

std::optional<FormulaSpec> parse_flag_formula(const std::string& flag, const std::string& text) {
  if (text.empty()) return std::nullopt;
  try {
    return parse_formula(text);
  } catch (const FormulaError& e) {
    throw UsageError(flag + ": " + e.what());
  }
}

Prepared prepare(const ModelFlags& f, ModelNeeds needs, std::string_view method_name) {
  auto require = [&](bool needed, const std::string& value, const std::string& flag, const char* what) {
    if (needed && value.empty()) {
      throw UsageError(flag + " is required: method '" + std::string(method_name) + "' needs " + what);
    }
  };
  require(needs.outcome, f.y_model, "--y-model", "an outcome model");
  require(needs.mediator, f.z_model, "--z-model", "a mediator model");
  require(needs.propensity, f.a_model, "--a-model", "a propensity model");
  if (!(f.propensity_floor > 0.0 && f.propensity_floor < 0.5)) throw UsageError("--propensity-floor must lie in (0, 0.5)");

  Roles roles{f.outcome, f.exposure, f.mediator, split_list(f.covariates)};
  const auto original_covariates = roles.covariates;
  CsvOptions options;
  options.one_hot = split_list(f.one_hot);

  EstimationConfig config;
  config.a_star = f.a_star;
  config.propensity_floor = f.propensity_floor;
  config.positivity = f.truncate ? PositivityPolicy::truncate : PositivityPolicy::error;
  if (!f.z_family.empty()) {
    config.mediator_family = f.z_family == "bernoulli" ? MediatorFamily::bernoulli : MediatorFamily::gaussian;
  }
  auto y = parse_flag_formula("--y-model", f.y_model);
  auto z = parse_flag_formula("--z-model", f.z_model);
  auto a = parse_flag_formula("--a-model", f.a_model);

  Dataset data = load_csv(f.data, roles, options);
  auto expand = [&](std::optional<FormulaSpec>& spec) {
    if (spec && !options.one_hot.empty()) spec = expand_one_hot(*spec, data, options.one_hot, original_covariates);
  };
  expand(y);
  expand(z);
  expand(a);
  if (needs.outcome) config.outcome_formula = y;
  if (needs.mediator) config.mediator_formula = z;
  if (needs.propensity) config.propensity_formula = a;
  return {std::move(data), std::move(config)};
}

ordered_json formulas_json(const EstimationConfig& config) {
  ordered_json j = ordered_json::object();
  if (config.outcome_formula) j["outcome"] = config.outcome_formula->render();
  if (config.mediator_formula) j["mediator"] = config.mediator_formula->render();
  if (config.propensity_formula) j["propensity"] = config.propensity_formula->render();
  return j;
}

template <class Body>
int guarded(std::span<const std::string> args, std::ostream& out, std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    return report_error(args, out, err, usage_failure, "usage", e.what());
  } catch (const Error& e) {
    return report_error(args, out, err, runtime_failure, to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return report_error(args, out, err, runtime_failure, "internal", e.what());
  }
}

}  // namespace

std::string schema_dir() {
#ifdef PIIE_SCHEMA_DIR
  return PIIE_SCHEMA_DIR;
#else
  return "schemas";
#endif
}

ordered_json to_json(const PiieResult& r) {
  ordered_json j;
  j["method"] = to_string(r.method);
  j["a_star"] = r.a_star;
  j["ey"] = r.ey;
  j["psi"] = r.psi;
  j["piie"] = r.piie;
  j["se"] = r.se;
  j["ci_lower"] = r.ci_lower;
  j["ci_upper"] = r.ci_upper;
  j["level"] = r.level;
  j["variance_method"] = to_string(r.variance_method);
  j["n"] = r.n;
  j["dropped_rows"] = r.dropped_rows;
  if (r.variance_method == VarianceMethod::bootstrap) {
    j["B"] = r.B;
    j["failed_resamples"] = r.failed_resamples;
    j["seed"] = r.seed;
  }
  j["warnings"] = r.warnings;
  return j;
}

ordered_json to_json(const OCTable& table, const OCOptions& options) {
  ordered_json j;
  j["n"] = options.n;
  j["reps"] = options.reps;
  j["seed"] = options.master_seed;
  j["a_star"] = options.a_star;
  j["level"] = options.level;
  if (!table.rows.empty()) {
    j["true_psi"] = table.rows.front().true_psi;
    j["true_piie"] = table.rows.front().true_piie;
  }
  ordered_json rows = ordered_json::array();
  for (const auto& r : table.rows) {
    ordered_json row;
    row["scenario"] = std::string(1, r.scenario);
    row["estimator"] = to_string(r.estimator);
    auto num = [](double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); };
    row["mean_psi"] = num(r.mean_psi);
    row["mean_piie"] = num(r.mean_piie);
    row["mc_variance"] = num(r.mc_variance);
    row["mean_estimated_variance"] = num(r.mean_estimated_variance);
    row["prop_bias"] = num(r.prop_bias);
    row["coverage"] = num(r.coverage);
    row["reps"] = r.reps;
    row["failures"] = r.failures;
    row["flagged"] = r.flagged;
    row["label"] = r.reps > 0 ? (r.biased() ? "biased" : "unbiased") : "failed";
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j;
}

ordered_json to_json(std::span<const ComparisonResult> results, std::size_t n, int a_star) {
  ordered_json j;
  j["reference"] = "dr";
  j["n"] = n;
  j["a_star"] = a_star;
  j["B"] = results.empty() ? 0 : results.front().B;
  j["seed"] = results.empty() ? 0 : results.front().seed;
  j["failed_resamples"] = results.empty() ? 0 : results.front().failures;
  ordered_json rows = ordered_json::array();
  for (const auto& r : results) {
    ordered_json row;
    row["method"] = to_string(r.method);
    row["psi_method"] = r.psi_method;
    row["psi_dr"] = r.psi_dr;
    row["diff"] = r.diff;
    row["se_diff"] = r.se_diff;
    row["z"] = std::isfinite(r.z) ? ordered_json(r.z) : ordered_json(nullptr);
    row["p_value"] = r.p_value;
    row["warnings"] = r.warnings;
    rows.push_back(std::move(row));
  }
  j["results"] = std::move(rows);
  return j;
}

void write_oc_csv(std::ostream& out, const OCTable& table) {
  out << "scenario,estimator,n,reps,failures,true_psi,true_piie,mean_psi,mean_piie,mc_variance,"
         "mean_estimated_variance,prop_bias,coverage,flagged,label\n";
  for (const auto& r : table.rows) {
    out << r.scenario << ',' << to_string(r.estimator) << ',' << r.n << ',' << r.reps << ',' << r.failures << ','
        << csv_num(r.true_psi) << ',' << csv_num(r.true_piie) << ',' << csv_num(r.mean_psi) << ','
        << csv_num(r.mean_piie) << ',' << csv_num(r.mc_variance) << ',' << csv_num(r.mean_estimated_variance) << ','
        << csv_num(r.prop_bias) << ',' << csv_num(r.coverage) << ',' << (r.flagged ? "true" : "false") << ','
        << (r.reps > 0 ? (r.biased() ? "biased" : "unbiased") : "failed") << '\n';
  }
}

void write_replicates_csv(std::ostream& out, const OCTable& table) {
  out << "scenario,rep,estimator,ok,psi,piie,variance,covered\n";
  for (const auto& r : table.replicates) {
    out << r.scenario << ',' << r.rep << ',' << to_string(r.estimator) << ',' << (r.ok ? 1 : 0) << ','
        << (r.ok ? csv_num(r.psi) : "NA") << ',' << (r.ok ? csv_num(r.piie) : "NA") << ','
        << (r.ok ? csv_num(r.variance) : "NA") << ',' << (r.ok ? (r.covered ? 1 : 0) : 0) << '\n';
  }
}

int cmd_estimate(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Estimate the population intervention indirect effect", "piie estimate"};
  ModelFlags f;
  add_model_flags(app, f);
  std::string method = "dr", variance = "sandwich";
  std::size_t B = 500;
  double level = 0.95;
  std::uint64_t seed = 1;
  app.add_option("--method", method, "estimator")
      ->check(CLI::IsMember({"mle", "mle_alt", "sp1", "sp2", "dr", "closed_form"}))
      ->capture_default_str();
  app.add_option("--variance", variance, "variance method")
      ->check(CLI::IsMember({"sandwich", "bootstrap", "closed_form"}))
      ->capture_default_str();
  app.add_option("--B", B, "bootstrap resamples")->capture_default_str();
  app.add_option("--level", level, "confidence level")->capture_default_str();
  app.add_option("--seed", seed, "bootstrap seed")->capture_default_str();
  if (auto code = parse(app, args, out, err)) return *code;

  return guarded(args, out, err, [&] {
    if (!(level > 0.0 && level < 1.0)) throw UsageError("--level must lie in (0, 1)");
    if (variance == "bootstrap" && B < 50) throw UsageError("--B must be at least 50 for bootstrap variance");
    const Method m = parse_method(method);
    auto prepared = prepare(f, needs_of(m), method);
    prepared.config.method = m;
    InferenceOptions options;
    options.variance = parse_variance_method(variance);
    options.level = level;
    options.B = B;
    options.seed = seed;
    options.threads = f.threads;
    const auto r = estimate_piie(prepared.data, prepared.config, options);
    for (const auto& w : r.warnings) err << "warning: " << w << "\n";

    if (f.format == "json") {
      auto j = to_json(r);
      j["formulas"] = formulas_json(prepared.config);
      out << j.dump(2) << "\n";
    } else if (f.format == "csv") {
      out << "method,a_star,ey,psi,piie,se,ci_lower,ci_upper,level,variance_method,n,dropped_rows,B,seed,warnings\n";
      out << to_string(r.method) << ',' << r.a_star << ',' << csv_num(r.ey) << ',' << csv_num(r.psi) << ','
          << csv_num(r.piie) << ',' << csv_num(r.se) << ',' << csv_num(r.ci_lower) << ',' << csv_num(r.ci_upper)
          << ',' << csv_num(r.level) << ',' << to_string(r.variance_method) << ',' << r.n << ',' << r.dropped_rows
          << ',' << r.B << ',' << r.seed << ',' << csv_escape(join(r.warnings, "; ")) << '\n';
    } else {
      const auto pct = fmt(100.0 * r.level) + "% CI";
      out << std::left;
      auto line = [&](const std::string& k, const std::string& v) { out << std::setw(16) << k << v << '\n'; };
      line("method", std::string(to_string(r.method)));
      line("a*", std::to_string(r.a_star));
      line("n", std::to_string(r.n) + " (" + std::to_string(r.dropped_rows) + " rows dropped)");
      line("E[Y]", fmt(r.ey));
      line("psi", fmt(r.psi));
      line("PIIE", fmt(r.piie));
      line("SE", fmt(r.se));
      line(pct, "[" + fmt(r.ci_lower) + ", " + fmt(r.ci_upper) + "]");
      line("variance", std::string(to_string(r.variance_method)) +
                           (r.variance_method == VarianceMethod::bootstrap
                                ? " (B = " + std::to_string(r.B) + ", seed " + std::to_string(r.seed) + ")"
                                : ""));
      for (const auto& w : r.warnings) line("warning", w);
    }
    return static_cast<int>(ok);
  });
}

int cmd_compare(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bootstrap comparison of estimators against the doubly robust estimator", "piie compare"};
  ModelFlags f;
  add_model_flags(app, f);
  std::string methods = "mle_alt,sp1,sp2";
  std::size_t B = 1000;
  std::uint64_t seed = 1;
  app.add_option("--methods", methods, "comma-separated estimators compared with dr")->capture_default_str();
  app.add_option("--B", B, "bootstrap resamples")->capture_default_str();
  app.add_option("--seed", seed, "bootstrap seed")->capture_default_str();
  if (auto code = parse(app, args, out, err)) return *code;

  return guarded(args, out, err, [&] {
    if (B < 50) throw UsageError("--B must be at least 50");
    std::vector<Method> list;
    for (const auto& name : split_list(methods)) {
      Method m;
      try {
        m = parse_method(name);
      } catch (const Error& e) {
        throw UsageError(std::string("--methods: ") + e.what());
      }
      if (m == Method::closed_form) throw UsageError("--methods: closed_form has no bootstrap comparison");
      list.push_back(m);
    }
    if (list.empty()) throw UsageError("--methods lists no estimators");
    auto prepared = prepare(f, needs_of(Method::dr), "dr");
    prepared.config.method = Method::dr;
    const auto results = hausman_compare(prepared.data, prepared.config, list, {B, seed, f.threads});
    for (const auto& r : results) {
      for (const auto& w : r.warnings) err << "warning: " << to_string(r.method) << ": " << w << "\n";
    }

    if (f.format == "json") {
      auto j = to_json(results, prepared.data.rows(), prepared.config.a_star);
      j["formulas"] = formulas_json(prepared.config);
      out << j.dump(2) << "\n";
    } else if (f.format == "csv") {
      out << "method,psi_method,psi_dr,diff,se_diff,z,p_value,B,failures,seed\n";
      for (const auto& r : results) {
        out << to_string(r.method) << ',' << csv_num(r.psi_method) << ',' << csv_num(r.psi_dr) << ','
            << csv_num(r.diff) << ',' << csv_num(r.se_diff) << ',' << csv_num(r.z) << ',' << csv_num(r.p_value)
            << ',' << r.B << ',' << r.failures << ',' << r.seed << '\n';
      }
    } else {
      out << "comparison with dr (B = " << (results.empty() ? 0 : results.front().B) << ", seed " << seed
          << ", n = " << prepared.data.rows() << ")\n";
      out << std::left << std::setw(12) << "method" << std::right << std::setw(13) << "psi" << std::setw(13)
          << "diff" << std::setw(13) << "se" << std::setw(13) << "z" << std::setw(13) << "p" << '\n';
      for (const auto& r : results) {
        out << std::left << std::setw(12) << to_string(r.method) << std::right << std::setw(13) << fmt(r.psi_method)
            << std::setw(13) << fmt(r.diff) << std::setw(13) << fmt(r.se_diff) << std::setw(13) << fmt(r.z)
            << std::setw(13) << fmt(r.p_value) << '\n';
      }
    }
    return static_cast<int>(ok);
  });
}

int cmd_simulate(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Operating characteristics of the estimators under the simulation design", "piie simulate"};
  std::string which = "all", estimators = "mle_alt,sp1,sp2,dr", out_dir, config_path, format = "table";
  OCOptions options;
  options.threads = default_threads();
  bool full = false;
  app.add_option("--scenario", which, "scenario a, b, c, d or all")
      ->check(CLI::IsMember({"a", "b", "c", "d", "all"}))
      ->capture_default_str();
  app.add_option("--estimators", estimators, "comma-separated estimators")->capture_default_str();
  app.add_option("--reps", options.reps, "replicates per scenario")->capture_default_str();
  app.add_option("--n", options.n, "sample size")->capture_default_str();
  app.add_option("--seed", options.master_seed, "master seed")->capture_default_str();
  app.add_option("--a-star", options.a_star, "reference exposure level")->check(CLI::IsMember({0, 1}))->capture_default_str();
  app.add_option("--level", options.level, "confidence level")->capture_default_str();
  app.add_flag("--full", full, "run 10000 replicates");
  app.add_option("--out", out_dir, "directory for oc_table.csv, oc_table.json and replicates.csv");
  app.add_option("--config", config_path, "key = value file overriding the design and scenario formulas")
      ->check(CLI::ExistingFile);
  app.add_option("--format", format, "output format")->check(CLI::IsMember({"json", "csv", "table"}))->capture_default_str();
  app.add_option("--threads", options.threads, "worker threads")->check(CLI::PositiveNumber);
  if (auto code = parse(app, args, out, err)) return *code;

  return guarded(args, out, err, [&] {
    if (full) options.reps = 10000;
    if (options.reps < 1) throw UsageError("--reps must be at least 1");
    if (options.n < 10) throw UsageError("--n must be at least 10");
    if (!(options.level > 0.0 && options.level < 1.0)) throw UsageError("--level must lie in (0, 1)");
    std::vector<Method> list;
    for (const auto& name : split_list(estimators)) {
      try {
        list.push_back(parse_method(name));
      } catch (const Error& e) {
        throw UsageError(std::string("--estimators: ") + e.what());
      }
    }
    if (list.empty()) throw UsageError("--estimators lists no estimators");

    std::map<char, ScenarioSpec> scenarios;
    for (auto& s : all_scenarios()) scenarios.emplace(s.id, s);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw Error(ErrorCode::unparseable_file, "cannot open config file '" + config_path + "'");
      apply_overrides(options.params, scenarios, parse_key_values(in));
    }
    std::vector<char> ids;
    if (which == "all") {
      for (const auto& [id, s] : scenarios) ids.push_back(id);
    } else {
      ids.push_back(which[0]);
    }

    OCTable table;
    for (char id : ids) table.append(run_operating_characteristics(scenarios.at(id), list, options));
    for (const auto& r : table.rows) {
      if (r.flagged) {
        err << "warning: scenario " << r.scenario << ", " << to_string(r.estimator) << ": " << r.failures
            << " of " << options.reps << " replicates failed\n";
      }
    }

    const auto j = to_json(table, options);
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      const std::filesystem::path dir(out_dir);
      std::ofstream csv(dir / "oc_table.csv"), js(dir / "oc_table.json"), reps(dir / "replicates.csv");
      if (!csv || !js || !reps) throw Error(ErrorCode::invalid_argument, "cannot write to '" + out_dir + "'");
      write_oc_csv(csv, table);
      js << j.dump(2) << "\n";
      write_replicates_csv(reps, table);
    }

    if (format == "json") {
      out << j.dump(2) << "\n";
    } else if (format == "csv") {
      write_oc_csv(out, table);
    } else {
      out << "n = " << options.n << ", replicates = " << options.reps << ", seed = " << options.master_seed
          << ", true psi = " << fmt(table.rows.front().true_psi) << ", true PIIE = " << fmt(table.rows.front().true_piie)
          << "\n";
      out << std::left << std::setw(10) << "scenario" << std::setw(13) << "estimator" << std::right << std::setw(12)
          << "psi" << std::setw(12) << "PIIE" << std::setw(12) << "variance" << std::setw(12) << "est.var"
          << std::setw(12) << "prop.bias" << std::setw(12) << "coverage" << "  label\n";
      for (const auto& r : table.rows) {
        out << std::left << std::setw(10) << std::string(1, r.scenario) << std::setw(13) << to_string(r.estimator)
            << std::right << std::setw(12) << fmt(r.mean_psi) << std::setw(12) << fmt(r.mean_piie) << std::setw(12)
            << fmt(r.mc_variance) << std::setw(12) << fmt(r.mean_estimated_variance) << std::setw(12)
            << fmt(r.prop_bias) << std::setw(12) << fmt(r.coverage) << "  "
            << (r.reps > 0 ? (r.biased() ? "biased" : "unbiased") : "failed") << (r.flagged ? " (flagged)" : "")
            << '\n';
      }
    }
    return static_cast<int>(ok);
  });
}

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  static const char* usage =
      "usage: piie <command> [options]\n"
      "\n"
      "commands:\n"
      "  estimate   estimate psi and the PIIE from a CSV file\n"
      "  simulate   operating characteristics under the simulation scenarios\n"
      "  compare    bootstrap test of estimators against the doubly robust one\n"
      "\n"
      "Run 'piie <command> --help' for the options of a command.\n";
  if (args.empty()) {
    err << usage;
    return usage_failure;
  }
  const auto& command = args[0];
  const auto rest = args.subspan(1);
  if (command == "--help" || command == "-h" || command == "help") {
    out << usage;
    return ok;
  }
  if (command == "estimate") return cmd_estimate(rest, out, err);
  if (command == "simulate") return cmd_simulate(rest, out, err);
  if (command == "compare") return cmd_compare(rest, out, err);
  return report_error(args, out, err, usage_failure, "usage", "unknown command '" + command + "'");
}

}  // namespace piie::cli
