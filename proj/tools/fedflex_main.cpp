#include "fedflex/cli.hpp"

int main(int argc, char** argv) { return fedflex::run_cli(argc, argv); }
