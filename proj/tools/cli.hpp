#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "piie/estimators.hpp"
#include "piie/inference.hpp"
#include "piie/simulate.hpp"

namespace piie::cli {

enum ExitCode { ok = 0, runtime_failure = 1, usage_failure = 2 };

// `args` excludes the program name; args[0] is the subcommand.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

// `args` excludes the subcommand.
int cmd_estimate(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int cmd_simulate(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int cmd_compare(std::span<const std::string> args, std::ostream& out, std::ostream& err);

nlohmann::ordered_json to_json(const PiieResult& result);
nlohmann::ordered_json to_json(const OCTable& table, const OCOptions& options);
nlohmann::ordered_json to_json(std::span<const ComparisonResult> results, std::size_t n, int a_star);

void write_oc_csv(std::ostream& out, const OCTable& table);
void write_replicates_csv(std::ostream& out, const OCTable& table);

// Directory holding the published JSON schemas.
std::string schema_dir();

}  // namespace piie::cli
