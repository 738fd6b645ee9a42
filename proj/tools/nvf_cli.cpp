// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "nvf/cli.hpp"

int main(int argc, char** argv) {
  return nvf::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
