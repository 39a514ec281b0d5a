#include "lfp/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return lfp::run_cli(argc, argv, std::cout, std::cerr);
}
