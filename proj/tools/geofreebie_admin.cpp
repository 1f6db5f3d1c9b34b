#include "geofreebie/admin_cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return geofreebie::admin::run_admin(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
