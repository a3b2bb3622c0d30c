#include <iostream>

#include "rax/cli.hpp"

int main(int argc, char** argv) { return rax::run_cli(argc, argv, std::cout, std::cerr); }
