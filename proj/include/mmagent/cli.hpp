#pragma once

// Command-line entry point. Subcommands: generate, curate, plan, export,
// walk, eval, replay.

#include <filesystem>
#include <string>
#include <vector>

namespace mmagent::cli {

enum ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kEndpoint = 3,
  kData = 4,
  kInternal = 5,
};

/// `args` excludes the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

/// Writes <out>.manifest.json: subcommand, config hash, input hashes, seed,
/// pipeline version.
void write_manifest(const std::filesystem::path& out, const std::string& subcommand, const std::string& config_json,
                    const std::vector<std::filesystem::path>& inputs, std::uint64_t seed,
                    const std::vector<std::string>& args);

}  // namespace mmagent::cli
