#include "afformer/cli.hpp"

int main(int argc, char** argv) { return afformer::cli_main(argc, argv); }
