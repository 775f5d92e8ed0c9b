#include <iostream>
#include <string>
#include <vector>

#include "taxon/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return taxon::run_cli(args, std::cout, std::cerr);
}
