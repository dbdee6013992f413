#include <iostream>

#include "sviqa/cli.hpp"

int main(int argc, char** argv) { return sviqa::cli_main(argc, argv, std::cout, std::cerr); }
