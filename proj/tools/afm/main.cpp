#include "afm/cli/cli.hpp"

int main(int argc, char** argv) { return afm::cli::main_entry(argc, argv); }
