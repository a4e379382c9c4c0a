// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "wfc/cli.hpp"

int main(int argc, char** argv) { return wfc::run_cli(argc, argv, std::cout, std::cerr); }
