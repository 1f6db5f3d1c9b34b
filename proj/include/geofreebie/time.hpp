#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace geofreebie {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using Duration = std::chrono::milliseconds;

// Source of "now". Services take one so tests can drive time explicitly.
using Clock = std::function<Timestamp()>;

Timestamp system_now();
Clock system_clock();

// "2019-02-07T09:30:00.000Z". Always UTC, always millisecond precision.
std::string format_timestamp(Timestamp t);

// Accepts "YYYY-MM-DDTHH:MM:SS[.fff]Z" (also "+00:00"). Returns nullopt on
// anything else.
std::optional<Timestamp> parse_timestamp(std::string_view text);

Timestamp from_unix_ms(long long ms);
long long to_unix_ms(Timestamp t);

// Settable clock for tests and simulations.
class ManualClock {
 public:
  explicit ManualClock(Timestamp start) : now_(start) {}
  Timestamp now() const { return now_; }
  void advance(Duration d) { now_ += d; }
  void set(Timestamp t) { now_ = t; }
  Clock as_clock() {
    return [this] { return now_; };
  }

 private:
  Timestamp now_;
};

}  // namespace geofreebie
