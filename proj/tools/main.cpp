#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return shadow_att::cli::run(argc, argv, std::cout, std::cerr); }
