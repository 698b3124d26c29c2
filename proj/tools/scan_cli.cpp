#include <iostream>

#include "scan/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return scan::run_cli(args, std::cout, std::cerr);
}
