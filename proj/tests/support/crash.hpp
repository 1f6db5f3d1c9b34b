#pragma once

// Fork a writer, SIGKILL it at a random moment, reopen the store and check it.

#include "geofreebie/store.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <csignal>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

namespace crash {

struct Report {
  int cycles = 0;
  int corrupt_stores = 0;
  int hybrid_records = 0;
  int lost_acks = 0;
  std::string first_problem;
};

inline std::string fill_for(std::uint64_t n, std::size_t len) {
  const std::string unit = std::to_string(n) + ";";
  std::string out;
  while (out.size() < len) out += unit;
  return out;
}

// A payload is whole when its fill is exactly what its header announces.
inline bool whole(const std::string& payload) {
  try {
    const auto j = nlohmann::json::parse(payload);
    const auto n = j.at("n").get<std::uint64_t>();
    const auto len = j.at("len").get<std::size_t>();
    return j.at("fill").get<std::string>() == fill_for(n, len);
  } catch (const std::exception&) {
    return false;
  }
}

inline std::string payload_for(std::uint64_t n, std::size_t len) {
  return nlohmann::json{{"n", n}, {"len", len}, {"fill", fill_for(n, len)}}.dump();
}

struct Ack {
  std::uint32_t slot;  // record slot, or 0xffffffff for a log append
  std::uint64_t value;
};

[[noreturn]] inline void writer(const std::filesystem::path& dir, std::uint64_t seed, int ack_fd, int ready_fd) {
  try {
    geofreebie::store::Store s(dir, geofreebie::store::Options{true});
    char ok = 1;
    if (::write(ready_fd, &ok, 1) != 1) ::_exit(3);
    std::mt19937_64 rng(seed);
    for (;;) {
      const std::size_t len = 256 + rng() % 4096;
      if (rng() % 3 == 0) {
        const auto seq = s.append_log(payload_for(s.last_seq() + 1, len));
        const Ack a{0xffffffffu, seq};
        if (::write(ack_fd, &a, sizeof a) != sizeof a) ::_exit(4);
      } else {
        const std::uint32_t slot = static_cast<std::uint32_t>(rng() % 4);
        const std::string id = "r" + std::to_string(slot);
        const auto cur = s.get("crash", id);
        const std::uint64_t v = cur ? cur->version : 0;
        s.put_if_version("crash", id, v, payload_for(v + 1, len), geofreebie::Timestamp{});
        const Ack a{slot, v + 1};
        if (::write(ack_fd, &a, sizeof a) != sizeof a) ::_exit(4);
      }
    }
  } catch (...) {
    ::_exit(2);
  }
}

inline Report run(const std::filesystem::path& dir, int cycles, std::uint64_t seed) {
  Report rep;
  std::mt19937_64 rng(seed);
  std::map<std::uint32_t, std::uint64_t> acked;
  std::uint64_t acked_log = 0;
  std::uint64_t checked_log = 0;
  auto problem = [&](const std::string& what) {
    if (rep.first_problem.empty()) rep.first_problem = "cycle " + std::to_string(rep.cycles) + ": " + what;
  };
  for (int c = 0; c < cycles; ++c) {
    int ack[2], ready[2];
    if (::pipe(ack) != 0 || ::pipe(ready) != 0) throw std::runtime_error("pipe");
    const pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork");
    if (pid == 0) {
      ::close(ack[0]);
      ::close(ready[0]);
      writer(dir, seed * 7919 + static_cast<std::uint64_t>(c), ack[1], ready[1]);
    }
    ::close(ack[1]);
    ::close(ready[1]);
    char ok = 0;
    const bool opened = ::read(ready[0], &ok, 1) == 1;
    ::close(ready[0]);
    if (opened) std::this_thread::sleep_for(std::chrono::microseconds(rng() % 6000));
    ::kill(pid, SIGKILL);
    int status = 0;
    ::waitpid(pid, &status, 0);
    Ack a{};
    while (::read(ack[0], &a, sizeof a) == static_cast<ssize_t>(sizeof a)) {
      if (a.slot == 0xffffffffu) acked_log = std::max(acked_log, a.value);
      else acked[a.slot] = std::max(acked[a.slot], a.value);
    }
    ::close(ack[0]);
    ++rep.cycles;
    if (!opened) {
      ++rep.corrupt_stores;
      problem("writer could not open the store");
      continue;
    }

    try {
      geofreebie::store::Store s(dir, geofreebie::store::Options{false});
      for (const auto& r : s.scan("crash")) {
        const auto j = nlohmann::json::parse(r.payload, nullptr, false);
        if (!whole(r.payload) || j.value("n", std::uint64_t{0}) != r.version) {
          ++rep.hybrid_records;
          problem("hybrid record " + r.id);
        }
      }
      for (const auto& [slot, v] : acked) {
        const auto r = s.get("crash", "r" + std::to_string(slot));
        if (!r || r->version < v) {
          ++rep.lost_acks;
          problem("acknowledged write lost on r" + std::to_string(slot));
        }
      }
      const auto log = s.read_log();
      if (log.size() < acked_log) {
        ++rep.lost_acks;
        problem("acknowledged log entry lost");
      }
      // Earlier entries were verified in previous cycles; the tail is what changed.
      for (const auto& e : s.read_log(checked_log + 1)) {
        const auto j = nlohmann::json::parse(e.payload, nullptr, false);
        if (!whole(e.payload) || j.value("n", std::uint64_t{0}) != e.seq) {
          ++rep.hybrid_records;
          problem("hybrid log entry " + std::to_string(e.seq));
          break;
        }
        checked_log = e.seq;
      }
    } catch (const std::exception& e) {
      ++rep.corrupt_stores;
      problem(e.what());
    }
  }
  return rep;
}

}  // namespace crash
