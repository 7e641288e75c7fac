#pragma once

#include "lw2g/trainer.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>

namespace lw2g::cli {

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses an INI-style config ([run], [stream], [encoder], [train],
/// [pretrain] sections of key = value lines). Unknown keys are errors.
ExperimentSpec parse_config(const std::string& text);
ExperimentSpec load_config(const std::string& path);

/// Git blob hash ("blob <size>\0" + bytes), lowercase hex.
std::string git_blob_sha1(const std::string& bytes);

/// Full command-line entry point; returns the process exit code.
int main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace lw2g::cli
