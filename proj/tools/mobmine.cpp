#include <iostream>

#include "mobmine/cli.hpp"

int main(int argc, char** argv) { return mobmine::run_cli(argc, argv, std::cout, std::cerr); }
