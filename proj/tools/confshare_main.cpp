#include <iostream>

#include "confshare/cli.hpp"

int main(int argc, char** argv) { return confshare::run_cli(argc, argv, std::cout, std::cerr); }
