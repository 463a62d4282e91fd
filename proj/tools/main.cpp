#include "dmsr/cli.hpp"

int main(int argc, char** argv) { return dmsr::cli::dispatch(argc, argv); }
