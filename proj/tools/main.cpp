#include <iostream>

#include "drustat/cli.hpp"

int main(int argc, char** argv) { return drustat::run_cli(argc, argv, std::cout, std::cerr); }
