#include "fprect/cli.hpp"

int main(int argc, char** argv) { return fprect::cli_main(argc, argv); }
