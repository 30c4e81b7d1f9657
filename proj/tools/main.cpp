#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) { return hat::run_cli(argc, argv, std::cout, std::cerr); }
