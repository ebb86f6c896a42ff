#include "dppvae/cli.hpp"

int main(int argc, char** argv) { return dppvae::cli::run_cli(argc, argv); }
