#include "elimrank/cli.hpp"

int main(int argc, char** argv) { return elimrank::run_cli(argc, argv); }
