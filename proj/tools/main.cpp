#include "fdif/harness.hpp"

int main(int argc, char** argv) { return fdif::run_cli(argc, argv); }
