#pragma once

#include <atomic>
#include <cstdint>

namespace alft::instrument {

/// Process-wide call counters. Tests read deltas around a call to check the
/// "two forward passes, one backward walk" contract of deeplift.
struct Counters {
  std::atomic<std::uint64_t> forward_passes{0};
  std::atomic<std::uint64_t> multiplier_walks{0};
  std::atomic<std::uint64_t> gradient_walks{0};
};

inline Counters& counters() {
  static Counters c;
  return c;
}

struct Snapshot {
  std::uint64_t forward_passes;
  std::uint64_t multiplier_walks;
  std::uint64_t gradient_walks;
};

inline Snapshot snapshot() {
  auto& c = counters();
  return {c.forward_passes.load(), c.multiplier_walks.load(), c.gradient_walks.load()};
}

}  // namespace alft::instrument
