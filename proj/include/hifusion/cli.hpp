#pragma once

#include <string>
#include <vector>

namespace hifusion {

enum ExitCode { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumerical = 4 };

// `hifusion <synth|preprocess|train|eval|ablate|plot> [flags]`
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace hifusion
