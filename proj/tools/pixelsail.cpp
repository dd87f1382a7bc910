#include "pixelsail/cli/app.hpp"

int main(int argc, char** argv) { return pixelsail::cli::run(argc, argv); }
