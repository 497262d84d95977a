#include "dyneq/cli.hpp"

int main(int argc, char** argv) { return dyneq::run_cli(std::vector<std::string>(argv + 1, argv + argc)); }
