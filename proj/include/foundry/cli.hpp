#pragma once

// The `foundry` command. Exit codes: 0 success, 1 usage error, 2 data or
// validation error. Errors go to `err` prefixed with "error[usage]:" or
// "error[data]:".

#include <iosfwd>
#include <string>
#include <vector>

#include "foundry/config.hpp"
#include "foundry/mixer.hpp"
#include "foundry/preprocess.hpp"

namespace foundry::cli {

// Every key the command understands. `model` and `hparams` are free-form
// subtrees.
const config::ConfigSchema& schema();

// Loads --config_path (if any) and applies "path=value" overrides.
config::ResolvedConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides);

shardstore::PreprocessSpec preprocess_spec(const config::ResolvedConfig& cfg);
mixer::MixSpec mix_spec(const config::ResolvedConfig& cfg);

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace foundry::cli
