#include <iostream>
#include <string>
#include <vector>

#include "tapegraph/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return tapegraph::cli::run(args, std::cout, std::cerr);
}
