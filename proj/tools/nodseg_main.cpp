#include "nodseg/cli.hpp"

int main(int argc, char** argv) { return nodseg::run_cli(argc, argv); }
