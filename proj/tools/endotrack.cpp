#include "endotrack/commands.hpp"

int main(int argc, char** argv) { return endotrack::cli::run(argc, argv); }
