#include <iostream>
#include <string>
#include <vector>

#include "microcsi/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return microcsi::run_cli(args, std::cout, std::cerr);
}
