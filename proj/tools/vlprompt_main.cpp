#include <string>
#include <vector>

#include "vlprompt/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return vlp::cli_dispatch(args);
}
