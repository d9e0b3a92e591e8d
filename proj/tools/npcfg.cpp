#include "npcfg/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return npcfg::run_cli(argc, argv, std::cout, std::cerr); }
