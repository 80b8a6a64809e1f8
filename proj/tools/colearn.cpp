#include <iostream>

#include "colearn/cli/cli.hpp"
#include "colearn/runtime.hpp"

int main(int argc, char** argv) {
    colearn::tune_allocator();
    return colearn::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
