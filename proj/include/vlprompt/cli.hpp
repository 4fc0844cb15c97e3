#pragma once

#include <string>
#include <vector>

namespace vlp {

/// Entry point behind the vlprompt binary. Subcommands: gen-corpus,
/// pretrain, prompt-train, eval, ablate, inspect. Returns the process exit
/// code: 0 success, 1 validation/runtime failure (one-line diagnostic on
/// stderr), 2 usage errors.
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace vlp
