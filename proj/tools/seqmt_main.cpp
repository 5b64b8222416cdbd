#include <iostream>

#include "seqmt/cli.hpp"

int main(int argc, char** argv) { return seqmt::run_cli(argc, argv, std::cout, std::cerr); }
