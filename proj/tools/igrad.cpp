#include "igrad/harness.hpp"

int main(int argc, char** argv) { return igrad::harness::run_cli(argc, argv); }
