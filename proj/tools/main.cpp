#include "gazekit/cli.hpp"

int main(int argc, char** argv) { return gazekit::cli::run(argc, argv); }
