#include "mfa/cli.hpp"

int main(int argc, char** argv) { return mfa::cli::main_dispatch(argc, argv); }
