#include <iostream>

#include "edgecap/cli/app.hpp"

int main(int argc, char** argv) {
  return edgecap::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
