#include "kfsc/cli.hpp"

int main(int argc, char** argv) { return kfsc::cli::run(argc, argv); }
