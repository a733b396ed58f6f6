#include "syncvsr/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return syncvsr::run_cli(argc, argv, std::cout, std::cerr); }
