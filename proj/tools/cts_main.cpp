#include "cts/cli.hpp"

int main(int argc, char** argv) { return cts::cli::run(argc, argv); }
