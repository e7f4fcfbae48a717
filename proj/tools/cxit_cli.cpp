#include <iostream>
#include <string>
#include <vector>

#include "cxit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cxit::run(args, std::cout, std::cerr);
}
