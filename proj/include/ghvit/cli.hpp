#pragma once

// Subcommand implementations behind the command-line binary, callable
// in-process so their exit codes and output are testable.

#include <cstdint>
#include <optional>
#include <string>

namespace ghvit {

struct CliOptions {
    std::string config_path;  // --config; empty = defaults
    // Overrides; unset fields leave the config value untouched.
    std::optional<std::string> variant, dataset, data_dir, out, checkpoint;
    std::optional<std::uint64_t> epochs, seed;
    std::string split{"test"};  // eval: which split to score
    std::string metrics_path;   // metrics-export input
};

int cmd_train(const CliOptions& opt);
int cmd_eval(const CliOptions& opt);
int cmd_gradcheck(std::uint64_t seed = 20260822);
int cmd_metrics_export(const CliOptions& opt);

}  // namespace ghvit
