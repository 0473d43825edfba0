#include <iostream>

#include "spfg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return spfg::cli::run(args, std::cout, std::cerr);
}
