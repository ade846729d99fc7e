#include <iostream>
#include <string>
#include <vector>

#include "grendel/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return grendel::run_cli(args, std::cout, std::cerr);
}
