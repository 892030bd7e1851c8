#include "lode/cli.hpp"

int main(int argc, char** argv) { return lode::cli_main(argc, argv); }
