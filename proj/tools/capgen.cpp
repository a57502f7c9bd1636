#include <iostream>

#include "capgen/cli.hpp"

int main(int argc, char** argv) { return capgen::cli::run(argc, argv, std::cout, std::cerr); }
