#include "isp/cli.hpp"

int main(int argc, char** argv) { return isp::cli::dispatch(argc, argv); }
