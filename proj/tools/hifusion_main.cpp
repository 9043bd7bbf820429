#include "hifusion/cli.hpp"

int main(int argc, char** argv) { return hifusion::run_cli(argc, argv); }
