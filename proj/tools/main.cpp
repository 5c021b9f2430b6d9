#include <iostream>

#include "crossglmm/cli.hpp"

int main(int argc, char** argv) { return crossglmm::cli_main(argc, argv, std::cout, std::cerr); }
