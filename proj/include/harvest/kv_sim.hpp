// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "harvest/interconnect.hpp"
#include "harvest/runtime.hpp"
#include "harvest/sim.hpp"

namespace harvest {

struct KVModelSpec {
  std::string name;
  Bytes bytes_per_entry = 1;  // all layers, one token, FP16
  double recompute_time_per_entry = 1e-3;

  void validate() const;
};

enum class KVTier : std::uint8_t { Local, Peer, Host, NotMaterialized };

std::string_view to_string(KVTier tier);

enum class EvictionOrder : std::uint8_t { LRU, FIFO, SequenceTail };

EvictionOrder parse_eviction_order(std::string_view text);

struct OffloadPolicy {
  EvictionOrder order = EvictionOrder::LRU;
  // Fraction of local HBM that KV blocks may occupy before eviction.
  double local_watermark = 0.9;

  void validate() const;
};

class TierExhausted : public HarvestError {
 public:
  using HarvestError::HarvestError;
};

struct KVBlock {
  std::uint64_t block_id = 0;
  int sequence_id = 0;
  int index = 0;    // position within the sequence
  int entries = 0;  // filled token positions
  Durability durability = Durability::Lossy;
  std::uint64_t content_hash = 0;
};

/// Content of a block holding `entries` tokens; recomputation reproduces it.
std::uint64_t kv_content(int sequence_id, int index, int entries);

struct BlockEntry {
  KVBlock block;
  KVTier tier = KVTier::Local;
  std::optional<HarvestHandle> handle;
  SimTime last_access = 0;
  SimTime created = 0;
  std::optional<Segment> local;      // allocation in the local KV budget
  std::optional<Segment> host_copy;  // allocation in host DRAM
  std::uint64_t host_content = 0;    // content written to the host copy
  bool in_flight = false;            // eviction or reload under way
  int pins = 0;
};

enum class FallbackPlan : std::uint8_t { FetchFromHost, Recompute };

std::string_view to_string(FallbackPlan plan);

double host_fetch_cost(const KVBlock& block, const KVModelSpec& model, const LinkParams& host);
double recompute_cost(const KVBlock& block, const KVModelSpec& model);

/// Chooses how to restore a block that is not available on a peer. Blocks
/// with a host copy are fetched iff the host transfer is no slower than
/// recomputation; blocks without one are always recomputed.
FallbackPlan resolve_fallback(const KVBlock& block, bool has_host_copy, const KVModelSpec& model,
                              const LinkParams& host);

struct KVStats {
  std::uint64_t evictions_to_peer = 0;
  std::uint64_t evictions_to_host = 0;
  std::uint64_t dropped = 0;
  std::uint64_t reloads_from_peer = 0;
  std::uint64_t reloads_from_host = 0;
  std::uint64_t recomputes = 0;
  std::uint64_t peer_misses = 0;  // peer handle revoked between lookup and issue
  std::uint64_t host_transfers = 0;
};

/// KV offload manager for one compute GPU. All mutations run on the
/// simulation's event loop; operations complete through callbacks.
class KVCacheSim {
 public:
  KVCacheSim(KVModelSpec model, const TopologyConfig& topology, OffloadPolicy policy = {},
             PolicyConfig runtime_policy = {}, int block_size = 16);
  KVCacheSim(const KVCacheSim&) = delete;
  KVCacheSim& operator=(const KVCacheSim&) = delete;

  Simulation& sim() { return *sim_; }
  Interconnect& net() { return *net_; }
  HarvestRuntime& runtime() { return *runtime_; }
  const KVModelSpec& model() const { return model_; }
  int block_size() const { return block_size_; }
  Bytes block_bytes() const { return static_cast<Bytes>(block_size_) * model_.bytes_per_entry; }
  const DeviceState& local_budget() const { return local_; }
  const KVStats& stats() const { return stats_; }
  DeviceId host_device() const { return host_id_; }

  /// Appends `tokens` positions to a sequence, filling its tail block and
  /// opening new local blocks. Waits for evictions when the local budget is
  /// full. Throws TierExhausted if nothing can be evicted.
  void append_kv(int sequence_id, int tokens, Durability durability = Durability::Lossy,
                 std::function<void()> done = {});

  /// Starts evicting unpinned local blocks in policy order until at least
  /// `bytes_needed` bytes of local budget are on their way out. Returns the
  /// chosen block ids.
  std::vector<std::uint64_t> evict(Bytes bytes_needed);

  /// Brings a block back to local HBM; `done` receives the content read.
  void reload(std::uint64_t block_id, std::function<void(std::uint64_t)> done);

  /// Pins every block of the sequence, reloads the non-local ones, and calls
  /// `done` with the content of each block in order. Blocks stay pinned
  /// until unpin_sequence.
  void access_sequence(int sequence_id, std::function<void(std::vector<std::uint64_t>)> done);
  void unpin_sequence(int sequence_id);

  const BlockEntry& block(std::uint64_t block_id) const;
  std::vector<std::uint64_t> sequence_blocks(int sequence_id) const;
  std::size_t block_count() const { return blocks_.size(); }
  std::size_t count(KVTier tier) const;

  /// Line-oriented dump of the block table.
  void dump(std::ostream& out) const;

  /// Residency exclusivity and handle consistency. Empty when valid.
  std::string check_invariants() const;

 private:
  struct Sequence {
    std::vector<std::uint64_t> blocks;
    Durability durability = Durability::Lossy;
  };

  BlockEntry& entry(std::uint64_t block_id);
  void append_step(int sequence_id, int remaining, std::function<void()> done,
                   std::optional<Segment> reserved = std::nullopt);
  void with_local_space(std::function<void(Segment)> next);
  void release_local(BlockEntry& e);
  void on_local_freed();
  void serve_waiters();
  void evict_block(BlockEntry& e);
  void finish_reload(std::uint64_t block_id, std::uint64_t content,
                     std::function<void(std::uint64_t)> done);
  void fallback_reload(std::uint64_t block_id, Segment local,
                       std::function<void(std::uint64_t)> done);
  void on_revoked(std::uint64_t block_id, const HarvestHandle& handle);
  std::optional<Segment> host_alloc(Bytes size);
  void log_block(EventKind kind, const BlockEntry& e, std::uint64_t aux = 0);

  KVModelSpec model_;
  OffloadPolicy policy_;
  int block_size_;
  std::unique_ptr<Simulation> sim_;
  std::unique_ptr<Interconnect> net_;
  std::unique_ptr<HarvestRuntime> runtime_;
  DeviceId host_id_ = -1;
  LinkParams host_link_;
  DeviceState local_;
  DeviceState host_;
  std::map<std::uint64_t, BlockEntry> blocks_;
  std::map<int, Sequence> sequences_;
  std::uint64_t next_block_id_ = 1;
  Bytes evicting_bytes_ = 0;
  int landing_reloads_ = 0;  // reloads holding a local segment
  std::vector<std::function<void()>> space_waiters_;
  KVStats stats_;
};

struct KVWorkload {
  int sequences = 4;
  int prompt_tokens = 64;
  int decode_steps = 16;
  Durability durability = Durability::Lossy;
};

struct KVWorkloadResult {
  std::uint64_t digest = 0;  // over every block content read
  double elapsed_s = 0.0;
  KVStats stats;
};

/// Decode loop: sequences take turns; each turn reads every block of the
/// sequence (reloading as needed) and appends one token.
KVWorkloadResult run_kv_workload(KVCacheSim& cache, const KVWorkload& workload);

struct ReloadRow {
  std::string model;
  int entries = 0;
  double host_s = 0.0;
  double peer_s = 0.0;
  double speedup = 0.0;
};

inline constexpr int kDefaultReloadEntries[] = {100, 500, 1000, 2000, 4000, 8000};

/// Reload latency of `entries` KV entries over the host and peer links.
std::vector<ReloadRow> reload_latency_experiment(std::span<const KVModelSpec> models,
                                                 std::span<const int> entry_counts,
                                                 const LinkParams& peer, const LinkParams& host);

}  // namespace harvest
