#include "trmf/cli.hpp"

int main(int argc, char** argv) { return trmf::cli::cli_dispatch(argc, argv); }
