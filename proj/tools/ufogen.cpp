#include "ufogen/cli.hpp"

int main(int argc, char** argv) { return ufogen::cli_main(argc, argv); }
