#include <iostream>
#include <string>
#include <vector>

#include "kwmlp/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return kwmlp::cli::run(args, std::cout, std::cerr);
}
