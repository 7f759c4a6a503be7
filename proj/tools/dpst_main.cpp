#include <iostream>

#include "dpst/job.hpp"

int main(int argc, char** argv) { return dpst::job::run_cli(argc, argv, std::cout, std::cerr); }
