#include "probetime/cli.hpp"

int main(int argc, char** argv) { return probetime::cli::run(argc, argv); }
