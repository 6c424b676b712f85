#include "cli.hpp"

int main(int argc, char** argv) { return latentaug::cli::run_cli(argc, argv); }
