// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "tfn/cli.hpp"

int main(int argc, char** argv) { return tfn::cli::run(argc, argv, std::cout, std::cerr); }
