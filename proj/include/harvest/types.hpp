// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace harvest {

using Bytes = std::uint64_t;

/// Simulation time in integer nanoseconds. Integer time keeps event ordering
/// exact and makes runs bit-reproducible.
using SimTime = std::int64_t;

using DeviceId = int;

inline constexpr Bytes KiB = 1024ULL;
inline constexpr Bytes MiB = 1024ULL * KiB;
inline constexpr Bytes GiB = 1024ULL * MiB;

inline constexpr SimTime kNanosPerSecond = 1'000'000'000;

/// Converts a modeled duration in seconds to simulation ticks, rounding up.
/// Sub-picosecond floating noise is ignored so exact inputs map exactly.
inline SimTime to_sim_time(double seconds) {
  if (seconds <= 0.0) return 0;
  return static_cast<SimTime>(std::ceil(seconds * 1e9 - 1e-3));
}

inline double to_seconds(SimTime t) { return static_cast<double>(t) / 1e9; }

enum class Tier : std::uint8_t { LocalHBM, PeerHBM, HostDRAM };

enum class Durability : std::uint8_t { Backed, Lossy };

std::string_view to_string(Tier tier);
std::string_view to_string(Durability durability);
Tier parse_tier(std::string_view text);

/// Base class for all library errors.
class HarvestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidSpec : public HarvestError {
 public:
  using HarvestError::HarvestError;
};

class ConfigError : public HarvestError {
 public:
  using HarvestError::HarvestError;
};

}  // namespace harvest
