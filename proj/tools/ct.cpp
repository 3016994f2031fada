#include <iostream>

#include "ct/cli/cli.hpp"

int main(int argc, char** argv) {
    return ct::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
