// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "harvest/kv_sim.hpp"
#include "harvest/moe_sim.hpp"
#include "harvest/runtime.hpp"
#include "harvest/traces.hpp"

namespace harvest {

enum class WorkloadKind : std::uint8_t { MoE, KV, Mixed };

std::string_view to_string(WorkloadKind kind);

struct MoEScenario {
  std::vector<std::string> models;
  std::vector<double> fractions_pct = {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::vector<Tier> tiers = {Tier::PeerHBM, Tier::HostDRAM};
  double speedup_fraction_pct = 50.0;
  PipelineConfig pipeline;
  RoutingConfig routing;
};

struct KVScenario {
  std::vector<std::string> models;
  std::vector<int> entries = {std::begin(kDefaultReloadEntries), std::end(kDefaultReloadEntries)};
  // Churn workload.
  KVWorkload workload;
  OffloadPolicy offload;
  int block_size = 16;
  Bytes local_capacity = 0;  // 0 keeps the calibration profile's
};

enum class AvailabilitySource : std::uint8_t { None, Markov, Trace };

struct AvailabilityScenario {
  AvailabilitySource source = AvailabilitySource::None;
  // Markov: harvestable share of the peer's usable bytes per level, percent.
  std::vector<double> levels_pct;
  std::vector<double> mean_sojourn_s;
  double horizon_s = 1.0;
  // Trace replay.
  std::filesystem::path trace;
  std::string machine;
  double time_scale = 1.0;
  ParseMode parse_mode = ParseMode::Strict;
  // MoE churn runs place this share of experts on the peer tier.
  double moe_fraction_pct = 50.0;
};

struct Scenario {
  std::string name = "scenario";
  WorkloadKind workload = WorkloadKind::MoE;
  std::vector<std::uint64_t> seeds;
  std::string profile = "paper-h100";
  int peers = 1;
  Bytes peer_capacity = 0;  // 0 keeps the calibration profile's
  Bytes reserved = 0;
  Bytes headroom = 0;
  PolicyConfig policy;
  MoEScenario moe;
  KVScenario kv;
  AvailabilityScenario availability;
  std::filesystem::path output;
  // Test hook: corrupts the churn event log before it is checked.
  bool inject_log_fault = false;

  /// Resolves profile names and cross-field constraints. Throws ConfigError
  /// naming the offending field.
  void validate() const;
};

/// Parses the INI-style scenario format. Relative paths resolve against
/// `base_dir`. Throws ConfigError naming the offending field.
Scenario parse_scenario(std::istream& in, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);

/// Runs every experiment of the scenario for each seed and writes the
/// metrics tables plus summary.csv into `out`. Returns the files written.
/// Throws InvariantViolation if an event log breaks an ordering rule.
std::vector<std::filesystem::path> run_scenario(const Scenario& scenario,
                                                const std::filesystem::path& out);

/// Writes `content` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace harvest
