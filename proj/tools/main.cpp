#include <iostream>
#include <string>
#include <vector>

#include "hiertax/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return hiertax::run_cli(args, std::cout, std::cerr);
}
