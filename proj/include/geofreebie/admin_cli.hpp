#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace geofreebie::admin {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

// Runs one geofreebie-admin invocation. `args` excludes the program name.
int run_admin(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace geofreebie::admin
