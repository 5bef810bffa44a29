#include "ccadj/cli.hpp"

int main(int argc, char** argv) { return ccadj::cli::run(argc, argv); }
