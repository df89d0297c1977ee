#include "t4d/cli.hpp"

int main(int argc, char** argv) { return t4d::run_cli(argc, argv); }
