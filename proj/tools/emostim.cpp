#include <iostream>
#include <string>
#include <vector>

#include "emostim/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return emostim::run_cli(args, std::cin, std::cout, std::cerr);
}
