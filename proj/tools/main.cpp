#include "cli.hpp"

int main(int argc, char** argv) { return chartgaze::cli::run(argc, argv); }
