#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  lipdd::cli::configure_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return lipdd::cli::run(args, std::cout, std::cerr);
}
