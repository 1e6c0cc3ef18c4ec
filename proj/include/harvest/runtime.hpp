// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "harvest/interconnect.hpp"
#include "harvest/memalloc.hpp"
#include "harvest/sim.hpp"

namespace harvest {

/// Identity of one peer allocation. The generation distinguishes reuse of the
/// same (device, base, size) range, so a handle never becomes valid again
/// once freed or revoked.
struct HarvestHandle {
  DeviceId device_id = -1;
  Bytes base = 0;
  Bytes size = 0;
  std::uint64_t generation = 0;

  Segment segment() const { return {base, size}; }
  friend bool operator==(const HarvestHandle&, const HarvestHandle&) = default;
};

struct AllocationHints {
  std::vector<DeviceId> preferred_devices;
  Durability durability = Durability::Lossy;
  std::string client_id;
  std::optional<std::string> locality_group;
  std::uint64_t object_tag = 0;
};

enum class PolicyKind : std::uint8_t { BestFit, Locality, Fairness, Stability };

std::string_view to_string(PolicyKind kind);
PolicyKind parse_policy(std::string_view text);

enum class ReclaimOrder : std::uint8_t { LRU, FIFO, LargestFirst };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::BestFit;
  // Fairness: token bucket per client_id.
  double fairness_bytes_per_second = 0.0;
  double fairness_burst_bytes = 0.0;
  // Stability: peers with >= threshold revocations in the trailing window
  // are not admissible.
  double stability_window_seconds = 10.0;
  int stability_threshold = 1;
  // Victim order for external reclamation.
  ReclaimOrder reclaim_order = ReclaimOrder::LRU;
};

enum class RevokeReason : std::uint8_t { Pressure, Policy, ExternalReclaim };

std::string_view to_string(RevokeReason reason);

class StaleHandle : public HarvestError {
 public:
  using HarvestError::HarvestError;
};

using RevocationCallback = std::function<void(const HarvestHandle&, RevokeReason)>;

/// Mutable policy bookkeeping consulted by select_peer.
struct PolicyState {
  struct Bucket {
    double tokens = 0.0;
    SimTime updated = 0;
  };
  std::map<std::string, Bucket> buckets;
  std::map<DeviceId, std::deque<SimTime>> revocations;

  /// Admission check and token consumption for Fairness.
  bool fairness_admits(const PolicyConfig& policy, const std::string& client, Bytes size,
                       SimTime now);
  void consume(const PolicyConfig& policy, const std::string& client, Bytes size, SimTime now);
  int recent_revocations(const PolicyConfig& policy, DeviceId device, SimTime now) const;
  void record_revocation(DeviceId device, SimTime now) { revocations[device].push_back(now); }
};

/// Chooses the peer device for an allocation, or nullopt if no candidate is
/// admissible. `hops` gives the link distance from the compute device for
/// the Locality policy (missing entries count as unreachable).
///
/// BestFit picks the device holding the globally smallest-leftover fitting
/// segment (ties: lowest base, then lowest device id). Locality restricts to
/// the fewest-hop fitting peers first. Fairness rejects clients over budget.
/// Stability drops peers with recent churn at or above the threshold.
std::optional<DeviceId> select_peer(const PolicyConfig& policy,
                                    std::span<const DeviceState* const> candidates, Bytes size,
                                    const AllocationHints& hints, const PolicyState& state,
                                    const std::map<DeviceId, int>& hops, SimTime now);

/// The harvest controller. Single writer: every mutation happens on the
/// simulation's event loop.
///
/// Revocation is ordered drain -> invalidate -> notify -> free, each step at
/// a strictly later timestamp than the one before it. Lookups fail from the
/// invalidation onward; the segment returns to the device only at the free.
class HarvestRuntime {
 public:
  HarvestRuntime(Simulation& sim, Interconnect& net, PolicyConfig policy = {},
                 DeviceId compute_device = kComputeDevice);

  /// Allocates on the peer chosen by the active policy. nullopt means
  /// NoCapacity; the caller falls back to host memory.
  std::optional<HarvestHandle> harvest_alloc(Bytes size, const AllocationHints& hints);

  /// As harvest_alloc, but safe to call from a revocation callback: the
  /// allocation is deferred until the in-progress revocation has freed its
  /// segment. Outside callbacks it completes synchronously.
  void harvest_alloc_async(Bytes size, AllocationHints hints,
                           std::function<void(std::optional<HarvestHandle>)> done);

  /// Releases a live handle. The segment returns to the device once in-flight
  /// transfers touching it have drained. Throws StaleHandle.
  void harvest_free(const HarvestHandle& handle);

  /// Records the revocation callback; re-registration replaces. Allowed
  /// until the handle is invalidated. Throws StaleHandle.
  void harvest_register_cb(const HarvestHandle& handle, RevocationCallback callback);

  /// Starts an ordered revocation. Stale or already-revoking handles are a
  /// no-op.
  void revoke(const HarvestHandle& handle, RevokeReason reason);

  /// Marks `amount` bytes of `device` as claimed by an external tenant.
  /// Free space is claimed immediately; the rest comes from revoking handles
  /// in reclaim order. Returns the handles chosen for revocation.
  std::vector<HarvestHandle> external_reclaim(DeviceId device, Bytes amount,
                                              RevokeReason reason = RevokeReason::ExternalReclaim);

  /// Returns up to `amount` externally claimed bytes to the harvestable pool.
  void external_release(DeviceId device, Bytes amount);

  /// True while the placement entry is valid (lookups hit).
  bool is_live(const HarvestHandle& handle) const;
  /// True between the start of a revocation and its invalidation step.
  bool is_revoking(const HarvestHandle& handle) const;

  /// Last-access bookkeeping for LRU reclamation.
  void touch(const HarvestHandle& handle);

  /// Copies `size` bytes from `src_device` into the peer region. The stored
  /// content becomes `content` on completion. Returns nullopt once the
  /// handle has been invalidated.
  std::optional<ScheduledTransfer> copy_to_peer(const HarvestHandle& handle, DeviceId src_device,
                                                std::uint64_t content,
                                                std::function<void()> done = {},
                                                std::uint64_t tag = 0);

  /// Copies the peer region to `dst_device`; `done` receives the content
  /// read. Returns nullopt (a miss) if the handle is not live.
  std::optional<ScheduledTransfer> copy_from_peer(const HarvestHandle& handle, DeviceId dst_device,
                                                  std::function<void(std::uint64_t)> done,
                                                  std::uint64_t tag = 0);

  std::vector<DeviceId> peer_ids() const;
  const DeviceState& device(DeviceId id) const;
  Bytes harvestable_capacity(DeviceId id) const { return device(id).harvestable_capacity(); }
  Bytes external_claimed(DeviceId id) const;
  Bytes pending_external_demand(DeviceId id) const;
  std::size_t live_handles() const;
  std::vector<HarvestHandle> live_handles_on(DeviceId id) const;

  const PolicyConfig& policy() const { return policy_; }
  Simulation& sim() { return sim_; }
  Interconnect& net() { return net_; }

  /// Observer for every successful allocation (test harnesses use it to
  /// inject adversarial revocations).
  void set_alloc_observer(std::function<void(const HarvestHandle&)> observer) {
    alloc_observer_ = std::move(observer);
  }

  /// Placement map vs. device state consistency. Empty string when valid.
  std::string check_invariants() const;

 private:
  enum class EntryState : std::uint8_t { Live, Revoking, Invalidated };

  struct PlacementEntry {
    HarvestHandle handle;
    std::uint64_t object_tag = 0;
    Durability durability = Durability::Lossy;
    std::string client_id;
    RevocationCallback callback;
    EntryState state = EntryState::Live;
    SimTime last_access = 0;
    std::optional<std::uint64_t> content;
    bool app_freed = false;
  };

  struct PeerDevice {
    DeviceState state;
    std::vector<Segment> external;  // externally claimed segments
    Bytes pending_demand = 0;
  };

  PlacementEntry* find_entry(const HarvestHandle& handle);
  const PlacementEntry* find_entry(const HarvestHandle& handle) const;
  PeerDevice& peer(DeviceId id);
  const PeerDevice& peer(DeviceId id) const;

  std::optional<HarvestHandle> allocate_now(Bytes size, const AllocationHints& hints);
  void after_drain(const HarvestHandle& handle, std::function<void()> next);
  void invalidate_step(std::uint64_t generation, RevokeReason reason);
  void notify_step(std::uint64_t generation, RevokeReason reason);
  void finish_free(std::uint64_t generation);
  void claim_free_space(DeviceId id);
  void log_handle(EventKind kind, const HarvestHandle& handle, std::uint64_t aux = 0);

  Simulation& sim_;
  Interconnect& net_;
  PolicyConfig policy_;
  DeviceId compute_device_;
  std::map<DeviceId, PeerDevice> peers_;
  std::map<DeviceId, int> hops_;
  std::map<std::uint64_t, PlacementEntry> placement_;  // by generation
  PolicyState policy_state_;
  std::uint64_t next_generation_ = 1;
  // Generation whose revocation callback is running, 0 outside callbacks.
  std::uint64_t in_callback_ = 0;
  std::map<std::uint64_t, std::vector<std::function<void()>>> deferred_;
  std::function<void(const HarvestHandle&)> alloc_observer_;
};

}  // namespace harvest
