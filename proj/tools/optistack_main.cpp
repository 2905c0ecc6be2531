#include <iostream>

#include "optistack/cli.hpp"

int main(int argc, char** argv) { return optistack::cli::run(argc, argv, std::cout, std::cerr); }
