#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "piie/error.hpp"

namespace piie {

// A main effect (one factor) or an interaction (several factors). Factors are
// kept sorted so that `a:z` and `z:a` compare equal.
struct Term {
  std::vector<std::string> factors;

  std::string name() const;
  bool involves(std::string_view column) const;
  int degree_in(std::string_view column) const;

  friend bool operator==(const Term&, const Term&) = default;
};

struct FormulaSpec {
  std::string response;
  std::vector<Term> terms;
  bool intercept = true;

  std::size_t columns() const { return terms.size() + (intercept ? 1 : 0); }
  std::vector<std::string> term_names() const;
  std::string render() const;

  friend bool operator==(const FormulaSpec&, const FormulaSpec&) = default;
};

// Grammar: `response ~ term (+ term)*`, term is `name` or `name:name[:...]`.
// `1` keeps the intercept, `0` or `- 1` drops it.
FormulaSpec parse_formula(std::string_view text);

struct Roles {
  std::string outcome;
  std::string exposure;
  std::string mediator;
  std::vector<std::string> covariates;
};

// Column store restricted to the role columns. Immutable after construction.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::string> names, std::vector<std::vector<double>> columns, Roles roles,
          std::size_t dropped_rows = 0);

  std::size_t rows() const { return n_; }
  std::size_t dropped_rows() const { return dropped_; }
  const Roles& roles() const { return roles_; }
  const std::vector<std::string>& column_names() const { return names_; }

  bool has_column(std::string_view name) const;
  std::span<const double> column(std::string_view name) const;
  std::span<const double> outcome() const { return column(roles_.outcome); }
  std::span<const double> exposure() const { return column(roles_.exposure); }
  std::span<const double> mediator() const { return column(roles_.mediator); }

  // Rows are copied in the given order; indices may repeat (bootstrap).
  Dataset resample(std::span<const std::size_t> rows) const;
  // Copy with `name` replaced (or appended as a covariate-free extra column).
  Dataset with_column(const std::string& name, std::vector<double> values) const;

  // n >= 2 and the exposure takes both values.
  void require_estimable() const;

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<std::string> names_;
  std::vector<std::vector<double>> columns_;
  Roles roles_;
  std::size_t n_ = 0;
  std::size_t dropped_ = 0;
};

struct CsvOptions {
  // Categorical role columns expanded into 0/1 indicators. The
  // lexicographically smallest level is the reference and gets no column.
  std::vector<std::string> one_hot;
};

Dataset load_csv(const std::string& path, const Roles& roles, const CsvOptions& options = {});
Dataset load_csv(std::istream& in, const Roles& roles, const CsvOptions& options = {});

struct DesignMatrix {
  Eigen::MatrixXd X;
  std::vector<std::string> term_names;
  FormulaSpec spec;
};

DesignMatrix build_design(const FormulaSpec& spec, const Dataset& data);

// Response vector named by `spec.response`.
std::span<const double> response_of(const FormulaSpec& spec, const Dataset& data);

// Evaluates design rows for single observations with the exposure and/or the
// mediator replaced by counterfactual values.
class RowEvaluator {
 public:
  RowEvaluator(const FormulaSpec& spec, const Dataset& data);

  std::size_t size() const { return width_; }
  void row(std::size_t i, Eigen::Ref<Eigen::VectorXd> out, std::optional<double> exposure = {},
           std::optional<double> mediator = {}) const;
  Eigen::VectorXd row(std::size_t i, std::optional<double> exposure = {},
                      std::optional<double> mediator = {}) const;

 private:
  enum class Source { column, exposure, mediator };
  struct Factor {
    const double* values;
    Source source;
  };

  bool intercept_;
  std::size_t width_;
  std::vector<std::vector<Factor>> terms_;
};

}  // namespace piie
