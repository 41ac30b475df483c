#include "ttoreg_cli/commands.hpp"

int main(int argc, char** argv) { return ttoreg::cli::run_cli(argc, argv); }
