#include "geesub/cli.hpp"

int main(int argc, char** argv) { return geesub::cli::run(argc, argv); }
