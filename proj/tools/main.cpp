#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return lw2g::cli::main(argc, argv, std::cout, std::cerr); }
