#include <string>
#include <vector>

#include "twinlearn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return twinlearn::run_cli(args);
}
