#include <vector>
#include <string>

#include "ccsafe/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ccsafe::cli::dispatch(args);
}
