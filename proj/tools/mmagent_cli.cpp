#include "mmagent/cli.hpp"

int main(int argc, char** argv) { return mmagent::cli::run(argc, argv); }
