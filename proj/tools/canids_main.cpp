#include <iostream>

#include "canids/cli/cli.hpp"

int main(int argc, char** argv) { return canids::cli::run(argc, argv, std::cout, std::cerr); }
