// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "harvest/interconnect.hpp"
#include "harvest/runtime.hpp"
#include "harvest/sim.hpp"

namespace harvest {

struct MoEModelSpec {
  std::string name;
  int num_layers = 1;
  int num_experts = 1;  // per layer
  int top_k = 1;
  Bytes expert_size = 1;
  double compute_time_per_microbatch = 1e-3;  // seconds, per layer

  void validate() const;
};

struct PipelineConfig {
  int microbatch_tokens = 324;
  int num_microbatches = 14;
  // Hottest experts per layer pinned in local HBM when placement is left to
  // the rebalancer.
  int local_cache_experts = 0;
  // Each decode step runs every micro-batch through every layer.
  int decode_steps = 1;

  void validate() const;
};

struct RoutingConfig {
  double skew = 1.2;      // Zipf exponent over expert rank
  int drift_period = 14;  // micro-batches between hot-set reshuffles; 0 = never
};

/// Normalized Zipf weights: w[r] proportional to (r + 1)^-skew.
std::vector<double> zipf_weights(int n, double skew);

/// Draws `k` distinct indices by successive sampling without replacement:
/// each draw is proportional to the weights of the indices not yet chosen.
std::vector<int> sample_without_replacement(std::span<const double> weights, int k,
                                            std::mt19937_64& rng);

struct RoutingTrace {
  int num_layers = 0;
  int num_experts = 0;
  int microbatch_tokens = 0;
  // activated[mb][layer]: sorted union of the tokens' top-k choices.
  std::vector<std::vector<std::vector<int>>> activated;
  // Token-level selection counts, token_counts[layer][expert].
  std::vector<std::vector<std::uint64_t>> token_counts;

  std::size_t num_microbatches() const { return activated.size(); }
  /// Micro-batches in [first, last) that activated each expert, per layer.
  std::vector<std::vector<std::uint64_t>> activation_counts(std::size_t first,
                                                            std::size_t last) const;
};

RoutingTrace generate_routing(const MoEModelSpec& model, const PipelineConfig& pipeline,
                              const RoutingConfig& routing, std::uint64_t seed);

struct ExpertLocation {
  Tier tier = Tier::HostDRAM;
  std::optional<HarvestHandle> handle;
  bool migrating = false;
};

class ExpertResidency {
 public:
  ExpertResidency() = default;
  ExpertResidency(int num_layers, int num_experts);

  ExpertLocation& at(int layer, int expert);
  const ExpertLocation& at(int layer, int expert) const;
  int num_layers() const { return num_layers_; }
  int num_experts() const { return num_experts_; }
  std::size_t count(Tier tier) const;

 private:
  int num_layers_ = 0;
  int num_experts_ = 0;
  std::vector<ExpertLocation> entries_;
};

struct Migration {
  int layer = 0;
  int expert = 0;
  HarvestHandle handle;
};

/// Authoritative content hash of an expert's weights.
std::uint64_t expert_content(int layer, int expert);

struct DecodeOptions {
  // Run the rebalancer every this many micro-batches (0 = off), ranking
  // experts by activations in the trailing `history_window` micro-batches.
  int rebalance_period = 0;
  int history_window = 14;
};

struct DecodeMetrics {
  double tokens_per_s = 0.0;
  double elapsed_s = 0.0;
  double stall_s = 0.0;
  std::vector<double> microbatch_latency_s;  // per stage, max(compute, fetch)
  std::uint64_t tokens = 0;
  std::uint64_t peer_fetches = 0;
  std::uint64_t host_fetches = 0;
  std::uint64_t fallback_fetches = 0;  // peer lookups that missed after revocation
  std::uint64_t migrations = 0;
  // Order-independent digest over (stage, expert, content) of every expert
  // each stage computed with.
  std::uint64_t digest = 0;
};

/// One MoE decode simulation: compute GPU, peers, host DRAM, the harvest
/// runtime and the expert residency map.
///
/// Stages run in order step -> layer -> micro-batch. Fetches for stage s+1
/// are issued when stage s starts, so stage s+1 starts at
/// max(end of stage s, arrival of its fetches). Experts are never retained
/// across stages unless pinned local.
class MoEDecodeSim {
 public:
  MoEDecodeSim(MoEModelSpec model, PipelineConfig pipeline, const TopologyConfig& topology,
               PolicyConfig policy = {});
  MoEDecodeSim(const MoEDecodeSim&) = delete;
  MoEDecodeSim& operator=(const MoEDecodeSim&) = delete;

  Simulation& sim() { return *sim_; }
  Interconnect& net() { return *net_; }
  HarvestRuntime& runtime() { return *runtime_; }
  ExpertResidency& residency() { return residency_; }
  const MoEModelSpec& model() const { return model_; }
  DeviceId host_device() const { return host_; }

  void pin_local(int layer, int expert);

  /// Moves the hottest host-resident experts (count > 0) into peer memory
  /// until harvest_alloc reports NoCapacity. Residency flips to peer when
  /// the copy completes; a revocation reverts it to host.
  std::vector<Migration> rebalance(const std::vector<std::vector<std::uint64_t>>& counts);

  /// Places the coldest `fraction` of experts per layer on `tier` and pins
  /// the rest local. Peer placement falls back to host on NoCapacity. Runs
  /// the placement copies to completion.
  void place_offload(const RoutingTrace& trace, double fraction, Tier tier);

  /// Runs the decode pipeline over the whole trace.
  DecodeMetrics run(const RoutingTrace& trace, const DecodeOptions& options = {});

 private:
  std::optional<Migration> migrate(int layer, int expert);
  void run_until_settled();

  MoEModelSpec model_;
  PipelineConfig pipeline_;
  std::unique_ptr<Simulation> sim_;
  std::unique_ptr<Interconnect> net_;
  std::unique_ptr<HarvestRuntime> runtime_;
  ExpertResidency residency_;
  DeviceId host_ = -1;
  std::size_t pending_migrations_ = 0;
  std::uint64_t migrations_started_ = 0;
};

struct SweepRow {
  double fraction_pct = 0.0;
  Tier tier = Tier::HostDRAM;
  double tokens_per_s = 0.0;
  double stall_s = 0.0;
};

/// Throughput versus offload percentage on one tier, over a single trace.
std::vector<SweepRow> offload_sweep(const MoEModelSpec& model, const PipelineConfig& pipeline,
                                    const TopologyConfig& topology,
                                    std::span<const double> fractions_pct, Tier tier,
                                    const RoutingTrace& trace);

/// Convenience overload generating the trace from `seed`.
std::vector<SweepRow> offload_sweep(const MoEModelSpec& model, const PipelineConfig& pipeline,
                                    const TopologyConfig& topology,
                                    std::span<const double> fractions_pct, Tier tier,
                                    const RoutingConfig& routing, std::uint64_t seed);

/// Peer-tier over host-tier throughput at one offload fraction.
double peer_vs_host_speedup(const MoEModelSpec& model, const PipelineConfig& pipeline,
                            const TopologyConfig& topology, double fraction_pct,
                            const RoutingTrace& trace);

}  // namespace harvest
