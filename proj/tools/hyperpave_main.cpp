#include <string>
#include <vector>

#include "hyperpave/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return hyperpave::cli::run_command(args);
}
