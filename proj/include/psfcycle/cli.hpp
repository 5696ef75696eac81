#pragma once

#include "psfcycle/trainer.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace psfcycle {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitFailure = 2 };

/// One metrics-log line, "epoch step term value", value printed with %.17g.
std::string metrics_record(int epoch, std::int64_t step, const std::string& term, double value);

/// All records of one training step in LossRecord::terms() order.
std::string metrics_records(int epoch, std::int64_t step, const LossRecord& r);

/// Runs the tool on argv-style arguments (args[0] is the program name).
/// Normal output goes to `out`, diagnostics and usage text to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace psfcycle
