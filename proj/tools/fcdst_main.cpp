#include <iostream>

#include "fcdst/cli.hpp"

int main(int argc, char** argv) { return fcdst::cli::run_cli(argc, argv, std::cin, std::cout, std::cerr); }
