#include "apdraw/cli.hpp"

int main(int argc, char** argv) { return apdraw::cli::run(argc, argv); }
