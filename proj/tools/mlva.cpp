// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "mlva/cli.hpp"

int main(int argc, char** argv) { return mlva::run_cli(argc, argv, std::cout, std::cerr); }
