#include "panelstate/cli.hpp"

int main(int argc, char** argv) { return panelstate::cli::run_cli(argc, argv); }
