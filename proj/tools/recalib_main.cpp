#include <iostream>

#include "recalib/cli.hpp"

int main(int argc, char** argv) { return recalib::run_cli(argc, argv, std::cout, std::cerr); }
