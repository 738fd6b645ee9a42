// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nvf::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kTrainingAborted = 2, kOracleMismatch = 3 };

/// Runs `nvf <command> [flags]`; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nvf::cli
