#include "atomdet/cli.hpp"

int main(int argc, char** argv) { return atomdet::run_cli(argc, argv); }
