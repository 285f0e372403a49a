#include <iostream>

#include "geoelim/cli.hpp"

int main(int argc, char** argv) { return geoelim::cli::run(argc, argv, std::cerr); }
