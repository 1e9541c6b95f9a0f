#include "piie/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace piie {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::syntax: return "syntax";
    case ErrorCode::duplicate_term: return "duplicate_term";
    case ErrorCode::unknown_token: return "unknown_token";
    case ErrorCode::unknown_column: return "unknown_column";
    case ErrorCode::missing_column: return "missing_column";
    case ErrorCode::unparseable_file: return "unparseable_file";
    case ErrorCode::non_binary_exposure: return "non_binary_exposure";
    case ErrorCode::empty_dataset: return "empty_dataset";
    case ErrorCode::constant_exposure: return "constant_exposure";
    case ErrorCode::singular_design: return "singular_design";
    case ErrorCode::degenerate_outcome: return "degenerate_outcome";
    case ErrorCode::degenerate_density: return "degenerate_density";
    case ErrorCode::unsupported_model: return "unsupported_model";
    case ErrorCode::positivity: return "positivity";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::resample_failure: return "resample_failure";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Formula parsing

std::string Term::name() const {
  std::string out;
  for (std::size_t k = 0; k < factors.size(); ++k) {
    if (k) out += ':';
    out += factors[k];
  }
  return out;
}

bool Term::involves(std::string_view column) const {
  return std::find(factors.begin(), factors.end(), column) != factors.end();
}

int Term::degree_in(std::string_view column) const {
  return static_cast<int>(std::count(factors.begin(), factors.end(), column));
}

std::vector<std::string> FormulaSpec::term_names() const {
  std::vector<std::string> names;
  names.reserve(columns());
  if (intercept) names.emplace_back("(Intercept)");
  for (const auto& t : terms) names.push_back(t.name());
  return names;
}

std::string FormulaSpec::render() const {
  std::string out = response + " ~ ";
  if (terms.empty()) return out + (intercept ? "1" : "0");
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (k) out += " + ";
    out += terms[k].name();
  }
  if (!intercept) out += " - 1";
  return out;
}

namespace {

struct Token {
  enum Kind { name, number, tilde, plus, minus, colon, end } kind;
  std::string text;
  std::size_t offset;
};

bool name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
bool name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    switch (c) {
      case '~': tokens.push_back({Token::tilde, "~", start}); ++i; continue;
      case '+': tokens.push_back({Token::plus, "+", start}); ++i; continue;
      case '-': tokens.push_back({Token::minus, "-", start}); ++i; continue;
      case ':': tokens.push_back({Token::colon, ":", start}); ++i; continue;
      default: break;
    }
    if (name_start(c)) {
      while (i < text.size() && name_char(text[i])) ++i;
      tokens.push_back({Token::name, std::string(text.substr(start, i - start)), start});
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      while (i < text.size() && name_char(text[i])) ++i;
      std::string digits(text.substr(start, i - start));
      if (digits != "0" && digits != "1") {
        throw FormulaError(ErrorCode::unknown_token, start,
                           "unexpected number '" + digits + "' (only 0 and 1 are allowed)");
      }
      tokens.push_back({Token::number, digits, start});
    } else {
      throw FormulaError(ErrorCode::unknown_token, start,
                         std::string("unexpected character '") + c + "'");
    }
  }
  tokens.push_back({Token::end, "", text.size()});
  return tokens;
}

}  // namespace

FormulaSpec parse_formula(std::string_view text) {
  const auto tokens = tokenize(text);
  std::size_t pos = 0;
  auto peek = [&]() -> const Token& { return tokens[pos]; };
  auto fail = [&](const std::string& msg) -> FormulaError {
    return FormulaError(ErrorCode::syntax, peek().offset, msg);
  };

  FormulaSpec spec;
  if (peek().kind != Token::name) throw fail("expected response name");
  spec.response = tokens[pos++].text;
  if (peek().kind != Token::tilde) throw fail("expected '~' after response");
  ++pos;

  bool negate = false;
  bool first = true;
  while (true) {
    if (!first) {
      if (peek().kind == Token::end) break;
      if (peek().kind == Token::plus) {
        negate = false;
      } else if (peek().kind == Token::minus) {
        negate = true;
      } else {
        throw fail("expected '+' or '-' between terms");
      }
      ++pos;
    } else if (peek().kind == Token::minus) {
      negate = true;
      ++pos;
    }
    first = false;

    const Token& tok = peek();
    if (tok.kind == Token::number) {
      if (negate && tok.text == "0") throw fail("'- 0' is not meaningful");
      spec.intercept = tok.text == "1" && !negate;
      ++pos;
      continue;
    }
    if (tok.kind != Token::name) throw fail("expected a term");
    if (negate) throw fail("only the intercept can be removed with '-'");
    const std::size_t term_offset = tok.offset;
    Term term;
    term.factors.push_back(tokens[pos++].text);
    while (peek().kind == Token::colon) {
      ++pos;
      if (peek().kind != Token::name) throw fail("expected a column name after ':'");
      term.factors.push_back(tokens[pos++].text);
    }
    std::sort(term.factors.begin(), term.factors.end());
    if (std::find(spec.terms.begin(), spec.terms.end(), term) != spec.terms.end()) {
      throw FormulaError(ErrorCode::duplicate_term, term_offset,
                         "duplicate term '" + term.name() + "'");
    }
    spec.terms.push_back(std::move(term));
  }
  if (spec.columns() == 0) {
    throw FormulaError(ErrorCode::syntax, text.size(), "model has no columns");
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<std::string> names, std::vector<std::vector<double>> columns,
                 Roles roles, std::size_t dropped_rows)
    : names_(std::move(names)), columns_(std::move(columns)), roles_(std::move(roles)),
      dropped_(dropped_rows) {
  if (names_.size() != columns_.size()) {
    throw Error(ErrorCode::dimension_mismatch, "column names and columns differ in count");
  }
  n_ = columns_.empty() ? 0 : columns_.front().size();
  for (std::size_t k = 0; k < columns_.size(); ++k) {
    if (columns_[k].size() != n_) {
      throw Error(ErrorCode::dimension_mismatch, "column '" + names_[k] + "' has wrong length");
    }
  }

  std::vector<std::string> role_columns{roles_.outcome, roles_.exposure, roles_.mediator};
  role_columns.insert(role_columns.end(), roles_.covariates.begin(), roles_.covariates.end());
  std::set<std::string> seen;
  for (const auto& name : role_columns) {
    if (name.empty()) throw Error(ErrorCode::invalid_argument, "empty role column name");
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::invalid_argument, "column '" + name + "' assigned to two roles");
    }
    const auto& values = columns_[index_of(name)];
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::invalid_argument, "column '" + name + "' has missing values");
      }
    }
  }
  for (double v : columns_[index_of(roles_.exposure)]) {
    if (v != 0.0 && v != 1.0) {
      throw Error(ErrorCode::non_binary_exposure,
                  "exposure column '" + roles_.exposure + "' must be 0/1, found " +
                      std::to_string(v));
    }
  }
}

std::size_t Dataset::index_of(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) {
    throw Error(ErrorCode::unknown_column, "unknown column '" + std::string(name) + "'");
  }
  return static_cast<std::size_t>(it - names_.begin());
}

bool Dataset::has_column(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::span<const double> Dataset::column(std::string_view name) const {
  return columns_[index_of(name)];
}

Dataset Dataset::resample(std::span<const std::size_t> rows) const {
  Dataset out;
  out.names_ = names_;
  out.roles_ = roles_;
  out.n_ = rows.size();
  out.columns_.resize(columns_.size());
  for (std::size_t k = 0; k < columns_.size(); ++k) {
    auto& dst = out.columns_[k];
    dst.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) dst[i] = columns_[k][rows[i]];
  }
  return out;
}

Dataset Dataset::with_column(const std::string& name, std::vector<double> values) const {
  auto names = names_;
  auto columns = columns_;
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    names.push_back(name);
    columns.push_back(std::move(values));
  } else {
    columns[static_cast<std::size_t>(it - names.begin())] = std::move(values);
  }
  return Dataset(std::move(names), std::move(columns), roles_, dropped_);
}

void Dataset::require_estimable() const {
  if (n_ < 2) throw Error(ErrorCode::empty_dataset, "need at least 2 complete rows");
  const auto a = exposure();
  if (std::all_of(a.begin(), a.end(), [&](double v) { return v == a.front(); })) {
    throw Error(ErrorCode::constant_exposure, "exposure column '" + roles_.exposure + "' is constant");
  }
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

// RFC-4180 record reader. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get(c);
      break;
    } else if (c == '\n') {
      break;
    } else {
      field += c;
    }
  }
  if (quoted) {
    throw Error(ErrorCode::unparseable_file, "unterminated quoted field near line " + std::to_string(line));
  }
  ++line;
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::optional<double> parse_number(std::string_view raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  double value = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::string sanitize_level(const std::string& level) {
  std::string out;
  for (char c : level) out += name_char(c) ? c : '_';
  return out.empty() ? std::string("_") : out;
}

}  // namespace

Dataset load_csv(const std::string& path, const Roles& roles, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::unparseable_file, "cannot open '" + path + "'");
  return load_csv(in, roles, options);
}

Dataset load_csv(std::istream& in, const Roles& roles, const CsvOptions& options) {
  std::size_t line = 1;
  std::vector<std::string> header;
  if (!read_record(in, header, line)) throw Error(ErrorCode::unparseable_file, "missing header row");
  for (auto& h : header) h = trim(h);
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  auto header_index = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::missing_column, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };

  auto is_one_hot = [&](const std::string& name) {
    return std::find(options.one_hot.begin(), options.one_hot.end(), name) != options.one_hot.end();
  };
  for (const auto& name : options.one_hot) {
    if (std::find(roles.covariates.begin(), roles.covariates.end(), name) == roles.covariates.end()) {
      throw Error(ErrorCode::invalid_argument, "one-hot column '" + name + "' is not a covariate");
    }
  }

  std::vector<std::string> role_columns{roles.outcome, roles.exposure, roles.mediator};
  role_columns.insert(role_columns.end(), roles.covariates.begin(), roles.covariates.end());
  std::vector<std::size_t> source;
  for (const auto& name : role_columns) source.push_back(header_index(name));

  std::vector<std::vector<double>> numeric(role_columns.size());
  std::vector<std::vector<std::string>> categorical(role_columns.size());
  std::size_t raw_rows = 0;
  std::size_t dropped = 0;
  std::vector<std::string> fields;
  while (read_record(in, fields, line)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;  // blank line
    ++raw_rows;
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::unparseable_file,
                  "line " + std::to_string(line - 1) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    bool complete = true;
    std::vector<double> values(role_columns.size(), 0.0);
    std::vector<std::string> labels(role_columns.size());
    for (std::size_t k = 0; k < role_columns.size() && complete; ++k) {
      const auto& raw = fields[source[k]];
      if (is_one_hot(role_columns[k])) {
        labels[k] = trim(raw);
        complete = !labels[k].empty() && labels[k] != "NA";
      } else if (auto v = parse_number(raw)) {
        values[k] = *v;
      } else {
        complete = false;
      }
    }
    if (!complete) {
      ++dropped;
      continue;
    }
    for (std::size_t k = 0; k < role_columns.size(); ++k) {
      if (is_one_hot(role_columns[k])) {
        categorical[k].push_back(std::move(labels[k]));
      } else {
        numeric[k].push_back(values[k]);
      }
    }
  }

  Roles out_roles = roles;
  out_roles.covariates.clear();
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
  for (std::size_t k = 0; k < role_columns.size(); ++k) {
    const auto& name = role_columns[k];
    if (!is_one_hot(name)) {
      names.push_back(name);
      columns.push_back(std::move(numeric[k]));
      if (k >= 3) out_roles.covariates.push_back(name);
      continue;
    }
    std::set<std::string> levels(categorical[k].begin(), categorical[k].end());
    bool reference = true;
    for (const auto& level : levels) {
      if (reference) {
        reference = false;
        continue;
      }
      std::vector<double> indicator(categorical[k].size());
      for (std::size_t i = 0; i < indicator.size(); ++i) indicator[i] = categorical[k][i] == level;
      names.push_back(name + "_" + sanitize_level(level));
      columns.push_back(std::move(indicator));
      out_roles.covariates.push_back(names.back());
    }
  }

  const std::size_t kept = raw_rows - dropped;
  if (kept == 0) throw Error(ErrorCode::empty_dataset, "no complete rows in role columns");
  return Dataset(std::move(names), std::move(columns), std::move(out_roles), dropped);
}

// ---------------------------------------------------------------------------
// Design matrices

DesignMatrix build_design(const FormulaSpec& spec, const Dataset& data) {
  const std::size_t n = data.rows();
  DesignMatrix design;
  design.spec = spec;
  design.term_names = spec.term_names();
  design.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.columns()));
  Eigen::Index col = 0;
  if (spec.intercept) design.X.col(col++).setOnes();
  for (const auto& term : spec.terms) {
    auto x = design.X.col(col++);
    x.setOnes();
    for (const auto& factor : term.factors) {
      const auto values = data.column(factor);
      for (std::size_t i = 0; i < n; ++i) x[static_cast<Eigen::Index>(i)] *= values[i];
    }
  }
  return design;
}

std::span<const double> response_of(const FormulaSpec& spec, const Dataset& data) {
  return data.column(spec.response);
}

RowEvaluator::RowEvaluator(const FormulaSpec& spec, const Dataset& data)
    : intercept_(spec.intercept), width_(spec.columns()) {
  const auto& roles = data.roles();
  for (const auto& term : spec.terms) {
    std::vector<Factor> factors;
    for (const auto& name : term.factors) {
      Source source = Source::column;
      if (name == roles.exposure) source = Source::exposure;
      if (name == roles.mediator) source = Source::mediator;
      factors.push_back({data.column(name).data(), source});
    }
    terms_.push_back(std::move(factors));
  }
}

void RowEvaluator::row(std::size_t i, Eigen::Ref<Eigen::VectorXd> out, std::optional<double> exposure,
                       std::optional<double> mediator) const {
  Eigen::Index col = 0;
  if (intercept_) out[col++] = 1.0;
  for (const auto& term : terms_) {
    double v = 1.0;
    for (const auto& f : term) {
      if (f.source == Source::exposure && exposure) {
        v *= *exposure;
      } else if (f.source == Source::mediator && mediator) {
        v *= *mediator;
      } else {
        v *= f.values[i];
      }
    }
    out[col++] = v;
  }
}

Eigen::VectorXd RowEvaluator::row(std::size_t i, std::optional<double> exposure,
                                  std::optional<double> mediator) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(width_));
  row(i, out, exposure, mediator);
  return out;
}

}  // namespace piie
