// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) {
  return evdi::cli::run(std::vector<std::string>(argv, argv + argc));
}
