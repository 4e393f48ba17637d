#include <iostream>

#include "aspectminer/experiment.hpp"

int main(int argc, char** argv) { return aspectminer::run_cli(argc, argv, std::cout, std::cerr); }
