#include <promptfuse/cli.hpp>

int main(int argc, char** argv) { return promptfuse::cli::run(argc, argv); }
