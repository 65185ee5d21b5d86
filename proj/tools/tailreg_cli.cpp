// Entry point for the tailreg command-line tool.
#include "tailreg/cli.hpp"

int main(int argc, char** argv) { return tailreg::run_cli(argc, argv); }
