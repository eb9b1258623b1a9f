#include "dualrec/cli.hpp"

int main(int argc, char** argv) { return dualrec::run_cli(argc, argv); }
