#include <epiprobe/cli.hpp>

int main(int argc, char** argv) { return epiprobe::cli::dispatch(argc, argv); }
