#include "diffspeed/cli/commands.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return diffspeed::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
