// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "harvest/memalloc.hpp"
#include "harvest/runtime.hpp"

namespace harvest {

struct SnapshotRecord {
  std::string machine_id;
  double timestamp = 0.0;  // seconds
  Bytes used = 0;
  Bytes capacity = 0;

  friend bool operator==(const SnapshotRecord&, const SnapshotRecord&) = default;
};

class TraceError : public HarvestError {
 public:
  using HarvestError::HarvestError;
};

enum class ParseMode : std::uint8_t { Strict, Lenient };

struct ParseResult {
  std::vector<SnapshotRecord> records;
  std::size_t rejected = 0;
  std::vector<std::string> errors;  // lenient mode: one message per rejected row
};

/// Reads "machine_id,timestamp,used,capacity" rows after a required header
/// row. Strict mode throws TraceError naming the first bad line; lenient
/// mode skips and counts bad rows.
ParseResult parse_snapshots(std::istream& in, ParseMode mode = ParseMode::Strict);

/// Writes the header and rows in the same schema parse_snapshots reads.
void write_snapshots(std::ostream& out, std::span<const SnapshotRecord> records);

enum class Aggregation : std::uint8_t { Mean, Max, PerSnapshot };

Aggregation parse_aggregation(std::string_view text);

/// Utilization samples: one per machine (Mean, Max) or one per snapshot.
/// Machines appear in order of first occurrence.
std::vector<double> utilization_samples(std::span<const SnapshotRecord> records,
                                        Aggregation aggregation = Aggregation::Mean);

struct CDFPoint {
  double utilization = 0.0;
  double cumulative = 0.0;
};

struct UtilizationCDF {
  std::vector<CDFPoint> points;   // at utilization i / resolution
  std::vector<double> samples;    // sorted

  /// Fraction of samples with utilization <= u.
  double at(double u) const;
};

/// Empirical CDF of per-machine utilization. Throws TraceError on empty
/// input.
UtilizationCDF compute_cdf(std::span<const SnapshotRecord> records, int resolution = 100,
                           Aggregation aggregation = Aggregation::Mean);

void write_cdf(std::ostream& out, const UtilizationCDF& cdf);

struct AvailabilityStep {
  SimTime time = 0;
  Bytes harvestable = 0;
};

/// Piecewise-constant harvestable bytes of one peer device.
struct AvailabilityTimeline {
  std::vector<AvailabilityStep> steps;  // strictly increasing times

  Bytes at(SimTime t) const;
  /// Fraction of [steps.front().time, horizon) spent at each distinct level.
  std::vector<std::pair<Bytes, double>> occupancy(SimTime horizon) const;
};

/// harvestable(t) = capacity * (1 - utilization(t)) - reserved - headroom,
/// clamped to [0, usable], using the snapshots of `machine_id` in time
/// order. Times are shifted to start at 0 and multiplied by `time_scale`.
AvailabilityTimeline availability_from_trace(std::span<const SnapshotRecord> records,
                                             const std::string& machine_id,
                                             const DeviceSpec& device, double time_scale = 1.0);

/// Continuous-time Markov chain over `levels` with exponential sojourns of
/// the given means; jumps go uniformly to one of the other levels. Starts at
/// level 0 and runs until `horizon` seconds.
AvailabilityTimeline markov_availability(std::span<const Bytes> levels,
                                         std::span<const double> mean_sojourns, double horizon,
                                         std::uint64_t seed);

/// Replays a timeline against one peer: drops become external_reclaim of the
/// shortfall, rises become external_release.
class AvailabilityDriver {
 public:
  AvailabilityDriver(HarvestRuntime& runtime, DeviceId device, AvailabilityTimeline timeline);

  /// Schedules every step on the runtime's simulation, relative to now.
  void start();

  std::size_t reclaims() const { return reclaims_; }
  std::size_t releases() const { return releases_; }
  std::size_t revoked_handles() const { return revoked_; }
  Bytes revoked_bytes() const { return revoked_bytes_; }

 private:
  void apply(Bytes harvestable);

  HarvestRuntime& runtime_;
  DeviceId device_;
  AvailabilityTimeline timeline_;
  Bytes claimed_target_ = 0;
  std::size_t reclaims_ = 0;
  std::size_t releases_ = 0;
  std::size_t revoked_ = 0;
  Bytes revoked_bytes_ = 0;
};

}  // namespace harvest
