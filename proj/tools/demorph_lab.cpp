#include "demorph/cli.hpp"

int main(int argc, char** argv) { return demorph::cli::run(argc, argv); }
