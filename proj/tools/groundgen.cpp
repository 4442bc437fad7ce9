#include "groundgen/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return groundgen::cli::run_app(argc, argv, std::cout, std::cerr); }
