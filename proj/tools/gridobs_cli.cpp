#include "gridobs/cli.hpp"

int main(int argc, char** argv) { return gridobs::run_cli(argc, argv); }
