#pragma once

#include <span>
#include <string>
#include <vector>

#include "nodseg/patch.hpp"

namespace nodseg {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point of the `nodseg` tool; returns the process exit code.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

/// Patches selected by a --split value: train, val, test, all or foldN.
/// val and test both name the hold-out fold; train is everything else.
std::vector<SlicePatch> select_split(std::span<const SlicePatch> patches, const std::string& split, int holdout_fold);

}  // namespace nodseg
