#pragma once

// Independent reference computations used to check the library. These are
// written from the textbook definitions, not from the library code.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace oracle {

inline constexpr double kR = 6371.0088;

inline double rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Spherical law of cosines.
inline double slc_km(double lat1, double lon1, double lat2, double lon2) {
  const double c = std::sin(rad(lat1)) * std::sin(rad(lat2)) +
                   std::cos(rad(lat1)) * std::cos(rad(lat2)) * std::cos(rad(lon2 - lon1));
  return kR * std::acos(std::clamp(c, -1.0, 1.0));
}

// SUS from the questionnaire's scoring sheet: positive (odd) statements
// score position-1, negative (even) statements 5-position, total x2.5.
inline double sus(const std::vector<int>& answers) {
  int total = 0;
  for (std::size_t k = 1; k <= answers.size(); ++k) {
    const int a = answers[k - 1];
    total += (k % 2 == 1) ? a - 1 : 5 - a;
  }
  return total * 2.5;
}

inline double median(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

// Mean to one decimal, half-up, by long division: the tenths digit is bumped
// when the truncated hundredths digit is 5 or more.
inline std::string mean_1dp(long long sum, long long n) {
  long long hundredths = (sum * 100) / n;
  long long tenths = hundredths / 10;
  if (hundredths % 10 >= 5) ++tenths;
  return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
}

}  // namespace oracle
