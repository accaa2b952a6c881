#include "sparsearch/cli.hpp"

int main(int argc, char** argv) { return sparsearch::cli_main(argc, argv); }
