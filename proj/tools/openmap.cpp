#include "openmap/cli.hpp"

int main(int argc, char** argv) { return openmap::cli::run(argc, argv); }
