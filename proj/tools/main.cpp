#include "shapemat/cli.hpp"

int main(int argc, char** argv) { return shapemat::run_cli(argc, argv); }
