#include <iostream>

#include "derm/cli.hpp"

int main(int argc, char** argv) {
  return derm::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
