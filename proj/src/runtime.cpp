// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/runtime.hpp"

#include <algorithm>
#include <limits>
#include <tuple>

namespace harvest {

namespace {

// Content reported for a peer region that was never written.
constexpr std::uint64_t kUnwrittenContent = 0xDEADBEEFDEADBEEFULL;

}  // namespace

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::BestFit: return "best_fit";
    case PolicyKind::Locality: return "locality";
    case PolicyKind::Fairness: return "fairness";
    case PolicyKind::Stability: return "stability";
  }
  return "unknown";
}

PolicyKind parse_policy(std::string_view text) {
  if (text == "best_fit") return PolicyKind::BestFit;
  if (text == "locality") return PolicyKind::Locality;
  if (text == "fairness") return PolicyKind::Fairness;
  if (text == "stability") return PolicyKind::Stability;
  throw ConfigError("unknown policy '" + std::string(text) +
                    "' (expected best_fit, locality, fairness or stability)");
}

std::string_view to_string(RevokeReason reason) {
  switch (reason) {
    case RevokeReason::Pressure: return "pressure";
    case RevokeReason::Policy: return "policy";
    case RevokeReason::ExternalReclaim: return "external_reclaim";
  }
  return "unknown";
}

namespace {

double refilled_tokens(const PolicyConfig& policy, const PolicyState::Bucket* bucket, SimTime now) {
  if (!bucket) return policy.fairness_burst_bytes;
  const double elapsed = to_seconds(now - bucket->updated);
  return std::min(policy.fairness_burst_bytes,
                  bucket->tokens + elapsed * policy.fairness_bytes_per_second);
}

}  // namespace

bool PolicyState::fairness_admits(const PolicyConfig& policy, const std::string& client,
                                  Bytes size, SimTime now) {
  auto it = buckets.find(client);
  return refilled_tokens(policy, it == buckets.end() ? nullptr : &it->second, now) >=
         static_cast<double>(size);
}

void PolicyState::consume(const PolicyConfig& policy, const std::string& client, Bytes size,
                          SimTime now) {
  auto it = buckets.find(client);
  const double tokens = refilled_tokens(policy, it == buckets.end() ? nullptr : &it->second, now);
  buckets[client] = Bucket{tokens - static_cast<double>(size), now};
}

int PolicyState::recent_revocations(const PolicyConfig& policy, DeviceId device,
                                    SimTime now) const {
  auto it = revocations.find(device);
  if (it == revocations.end()) return 0;
  const SimTime horizon = now - to_sim_time(policy.stability_window_seconds);
  return static_cast<int>(std::count_if(it->second.begin(), it->second.end(),
                                         [&](SimTime t) { return t > horizon; }));
}

std::optional<DeviceId> select_peer(const PolicyConfig& policy,
                                    std::span<const DeviceState* const> candidates, Bytes size,
                                    const AllocationHints& hints, const PolicyState& state,
                                    const std::map<DeviceId, int>& hops, SimTime now) {
  if (size == 0) return std::nullopt;
  if (policy.kind == PolicyKind::Fairness) {
    auto it = state.buckets.find(hints.client_id);
    const double tokens =
        refilled_tokens(policy, it == state.buckets.end() ? nullptr : &it->second, now);
    if (tokens < static_cast<double>(size)) return std::nullopt;
  }

  struct Option {
    Bytes leftover;
    Bytes base;
    DeviceId device;
    int hops;
  };
  std::vector<Option> options;
  for (const DeviceState* device : candidates) {
    auto hole = device->find_best_fit(size);
    if (!hole) continue;
    if (policy.kind == PolicyKind::Stability &&
        state.recent_revocations(policy, device->id(), now) >= policy.stability_threshold) {
      continue;
    }
    int distance = std::numeric_limits<int>::max();
    if (auto h = hops.find(device->id()); h != hops.end()) distance = h->second;
    options.push_back({hole->size - size, hole->base, device->id(), distance});
  }
  if (options.empty()) return std::nullopt;

  auto key = [&](const Option& o) {
    const int hop_key = policy.kind == PolicyKind::Locality ? o.hops : 0;
    return std::make_tuple(hop_key, o.leftover, o.base, o.device);
  };
  const auto best = std::min_element(options.begin(), options.end(),
                                     [&](const Option& x, const Option& y) { return key(x) < key(y); });
  return best->device;
}

HarvestRuntime::HarvestRuntime(Simulation& sim, Interconnect& net, PolicyConfig policy,
                               DeviceId compute_device)
    : sim_(sim), net_(net), policy_(policy), compute_device_(compute_device) {
  for (const auto& spec : net_.topology().devices()) {
    if (spec.tier != Tier::PeerHBM) continue;
    peers_.emplace(spec.device_id, PeerDevice{DeviceState(spec), {}, 0});
    if (auto h = net_.topology().hops(compute_device_, spec.device_id)) hops_[spec.device_id] = *h;
  }
}

HarvestRuntime::PeerDevice& HarvestRuntime::peer(DeviceId id) {
  auto it = peers_.find(id);
  if (it == peers_.end()) throw InvalidSpec("device " + std::to_string(id) + " is not a peer");
  return it->second;
}

const HarvestRuntime::PeerDevice& HarvestRuntime::peer(DeviceId id) const {
  auto it = peers_.find(id);
  if (it == peers_.end()) throw InvalidSpec("device " + std::to_string(id) + " is not a peer");
  return it->second;
}

HarvestRuntime::PlacementEntry* HarvestRuntime::find_entry(const HarvestHandle& handle) {
  auto it = placement_.find(handle.generation);
  if (it == placement_.end() || !(it->second.handle == handle)) return nullptr;
  return &it->second;
}

const HarvestRuntime::PlacementEntry* HarvestRuntime::find_entry(const HarvestHandle& handle) const {
  auto it = placement_.find(handle.generation);
  if (it == placement_.end() || !(it->second.handle == handle)) return nullptr;
  return &it->second;
}

void HarvestRuntime::log_handle(EventKind kind, const HarvestHandle& handle, std::uint64_t aux) {
  LogRecord r;
  r.kind = kind;
  r.issuer = Issuer::Runtime;
  r.device = handle.device_id;
  r.base = handle.base;
  r.size = handle.size;
  r.generation = handle.generation;
  r.aux = aux;
  sim_.record(r);
}

std::optional<HarvestHandle> HarvestRuntime::allocate_now(Bytes size,
                                                          const AllocationHints& hints) {
  if (size == 0 || peers_.empty()) return std::nullopt;

  auto choose = [&](bool preferred_only) -> std::optional<DeviceId> {
    std::vector<const DeviceState*> candidates;
    for (const auto& [id, p] : peers_) {
      if (preferred_only &&
          std::find(hints.preferred_devices.begin(), hints.preferred_devices.end(), id) ==
              hints.preferred_devices.end()) {
        continue;
      }
      candidates.push_back(&p.state);
    }
    if (candidates.empty()) return std::nullopt;
    return select_peer(policy_, candidates, size, hints, policy_state_, hops_, sim_.now());
  };

  std::optional<DeviceId> target;
  if (!hints.preferred_devices.empty()) target = choose(true);
  if (!target) target = choose(false);
  if (!target) return std::nullopt;

  PeerDevice& p = peer(*target);
  auto segment = p.state.alloc_best_fit(size);
  if (!segment) return std::nullopt;
  if (policy_.kind == PolicyKind::Fairness) {
    policy_state_.consume(policy_, hints.client_id, size, sim_.now());
  }

  HarvestHandle handle{*target, segment->base, segment->size, next_generation_++};
  PlacementEntry entry;
  entry.handle = handle;
  entry.object_tag = hints.object_tag;
  entry.durability = hints.durability;
  entry.client_id = hints.client_id;
  entry.last_access = sim_.now();
  placement_.emplace(handle.generation, std::move(entry));
  log_handle(EventKind::Alloc, handle, hints.object_tag);
  if (alloc_observer_) alloc_observer_(handle);
  return handle;
}

std::optional<HarvestHandle> HarvestRuntime::harvest_alloc(Bytes size,
                                                           const AllocationHints& hints) {
  if (in_callback_ != 0) {
    throw HarvestError(
        "harvest_alloc called from a revocation callback; use harvest_alloc_async");
  }
  return allocate_now(size, hints);
}

void HarvestRuntime::harvest_alloc_async(Bytes size, AllocationHints hints,
                                         std::function<void(std::optional<HarvestHandle>)> done) {
  if (in_callback_ != 0) {
    deferred_[in_callback_].push_back(
        [this, size, hints = std::move(hints), done = std::move(done)]() {
          auto handle = allocate_now(size, hints);
          if (done) done(handle);
        });
    return;
  }
  auto handle = allocate_now(size, hints);
  if (done) done(handle);
}

void HarvestRuntime::after_drain(const HarvestHandle& handle, std::function<void()> next) {
  auto latest = net_.last_inflight_completion(handle.device_id, handle.segment());
  if (latest) {
    sim_.schedule_at(*latest + 1, [this, handle, next = std::move(next)]() mutable {
      after_drain(handle, std::move(next));
    });
    return;
  }
  next();
}

void HarvestRuntime::harvest_free(const HarvestHandle& handle) {
  PlacementEntry* entry = find_entry(handle);
  if (!entry || entry->state == EntryState::Invalidated || entry->app_freed) {
    throw StaleHandle("harvest_free: stale handle (generation " +
                      std::to_string(handle.generation) + ")");
  }
  log_handle(EventKind::AppFree, handle);
  if (entry->state == EntryState::Revoking) {
    // The revocation in progress frees the segment; the application has
    // given the handle up, so no notification is delivered.
    entry->callback = nullptr;
    entry->app_freed = true;
    return;
  }
  entry->state = EntryState::Invalidated;
  const std::uint64_t generation = handle.generation;
  after_drain(handle, [this, generation]() { finish_free(generation); });
}

void HarvestRuntime::harvest_register_cb(const HarvestHandle& handle,
                                         RevocationCallback callback) {
  PlacementEntry* entry = find_entry(handle);
  if (!entry || entry->state == EntryState::Invalidated || entry->app_freed) {
    throw StaleHandle("harvest_register_cb: stale handle (generation " +
                      std::to_string(handle.generation) + ")");
  }
  entry->callback = std::move(callback);
}

void HarvestRuntime::revoke(const HarvestHandle& handle, RevokeReason reason) {
  PlacementEntry* entry = find_entry(handle);
  if (!entry || entry->state != EntryState::Live) return;
  entry->state = EntryState::Revoking;
  log_handle(EventKind::RevokeBegin, handle, static_cast<std::uint64_t>(reason));
  policy_state_.record_revocation(handle.device_id, sim_.now());

  // The drain check runs as its own event so a revocation requested inside
  // another operation never invalidates the handle under the caller.
  const std::uint64_t generation = handle.generation;
  sim_.schedule_after(0, [this, handle, generation, reason]() {
    after_drain(handle, [this, generation, reason]() { invalidate_step(generation, reason); });
  });
}

void HarvestRuntime::invalidate_step(std::uint64_t generation, RevokeReason reason) {
  PlacementEntry& e = placement_.at(generation);
  e.state = EntryState::Invalidated;
  log_handle(EventKind::Invalidate, e.handle, static_cast<std::uint64_t>(reason));
  sim_.schedule_after(1, [this, generation, reason]() { notify_step(generation, reason); });
}

void HarvestRuntime::notify_step(std::uint64_t generation, RevokeReason reason) {
  PlacementEntry& e = placement_.at(generation);
  if (e.callback) {
    log_handle(EventKind::Callback, e.handle, static_cast<std::uint64_t>(reason));
    const RevocationCallback callback = std::move(e.callback);
    e.callback = nullptr;
    const HarvestHandle revoked = e.handle;
    in_callback_ = generation;
    try {
      callback(revoked, reason);
    } catch (...) {
      in_callback_ = 0;
      throw;
    }
    in_callback_ = 0;
  }
  sim_.schedule_after(1, [this, generation]() { finish_free(generation); });
}

void HarvestRuntime::finish_free(std::uint64_t generation) {
  auto it = placement_.find(generation);
  if (it == placement_.end()) return;
  const HarvestHandle handle = it->second.handle;
  peer(handle.device_id).state.free_segment(handle.segment());
  log_handle(EventKind::Free, handle);
  placement_.erase(it);
  claim_free_space(handle.device_id);
  if (auto d = deferred_.find(generation); d != deferred_.end()) {
    auto pending = std::move(d->second);
    deferred_.erase(d);
    for (auto& fn : pending) fn();
  }
}

void HarvestRuntime::claim_free_space(DeviceId id) {
  PeerDevice& p = peer(id);
  while (p.pending_demand > 0 && p.state.harvestable_capacity() > 0) {
    Segment hole{0, 0};
    for (const auto& s : p.state.free_list()) {
      if (s.size > hole.size) hole = s;
    }
    const Bytes take = std::min(hole.size, p.pending_demand);
    const Segment claimed = p.state.allocate_from(hole.base, take);
    p.external.push_back(claimed);
    p.pending_demand -= take;
    LogRecord r;
    r.kind = EventKind::ExternalClaim;
    r.issuer = Issuer::Runtime;
    r.device = id;
    r.base = claimed.base;
    r.size = claimed.size;
    sim_.record(r);
  }
}

std::vector<HarvestHandle> HarvestRuntime::external_reclaim(DeviceId device, Bytes amount,
                                                            RevokeReason reason) {
  std::vector<HarvestHandle> victims;
  if (amount == 0) return victims;
  PeerDevice& p = peer(device);
  const Bytes claimed = external_claimed(device);
  const Bytes ceiling = p.state.spec().usable() - claimed;
  p.pending_demand = std::min(ceiling, p.pending_demand + amount);
  claim_free_space(device);

  Bytes covered = 0;
  std::vector<const PlacementEntry*> live;
  for (const auto& [gen, e] : placement_) {
    if (e.handle.device_id != device) continue;
    if (e.state == EntryState::Live) {
      live.push_back(&e);
    } else {
      covered += e.handle.size;  // already on its way back to the free list
    }
  }
  auto order_key = [&](const PlacementEntry* e) {
    switch (policy_.reclaim_order) {
      case ReclaimOrder::LRU: return std::make_tuple(e->last_access, e->handle.generation);
      case ReclaimOrder::FIFO: return std::make_tuple(SimTime{0}, e->handle.generation);
      case ReclaimOrder::LargestFirst:
        return std::make_tuple(-static_cast<SimTime>(e->handle.size), e->handle.generation);
    }
    return std::make_tuple(SimTime{0}, e->handle.generation);
  };
  std::sort(live.begin(), live.end(),
            [&](const PlacementEntry* a, const PlacementEntry* b) { return order_key(a) < order_key(b); });
  for (const PlacementEntry* e : live) {
    if (covered >= p.pending_demand) break;
    victims.push_back(e->handle);
    covered += e->handle.size;
  }
  for (const auto& h : victims) revoke(h, reason);
  return victims;
}

void HarvestRuntime::external_release(DeviceId device, Bytes amount) {
  PeerDevice& p = peer(device);
  const Bytes from_demand = std::min(p.pending_demand, amount);
  p.pending_demand -= from_demand;
  amount -= from_demand;
  while (amount > 0 && !p.external.empty()) {
    Segment& last = p.external.back();
    LogRecord r;
    r.kind = EventKind::ExternalRelease;
    r.issuer = Issuer::Runtime;
    r.device = device;
    if (last.size <= amount) {
      p.state.free_segment(last);
      amount -= last.size;
      r.base = last.base;
      r.size = last.size;
      p.external.pop_back();
    } else {
      const Bytes keep = last.size - amount;
      r.base = last.base + keep;
      r.size = amount;
      last = p.state.shrink_allocation(last, keep);
      amount = 0;
    }
    sim_.record(r);
  }
}

bool HarvestRuntime::is_live(const HarvestHandle& handle) const {
  const PlacementEntry* entry = find_entry(handle);
  return entry && entry->state != EntryState::Invalidated;
}

bool HarvestRuntime::is_revoking(const HarvestHandle& handle) const {
  const PlacementEntry* entry = find_entry(handle);
  return entry && entry->state == EntryState::Revoking;
}

void HarvestRuntime::touch(const HarvestHandle& handle) {
  if (PlacementEntry* entry = find_entry(handle)) entry->last_access = sim_.now();
}

std::optional<ScheduledTransfer> HarvestRuntime::copy_to_peer(const HarvestHandle& handle,
                                                              DeviceId src_device,
                                                              std::uint64_t content,
                                                              std::function<void()> done,
                                                              std::uint64_t tag) {
  PlacementEntry* entry = find_entry(handle);
  if (!entry || entry->state == EntryState::Invalidated) return std::nullopt;
  entry->last_access = sim_.now();
  TransferRequest req;
  req.src_device = src_device;
  req.src = {0, handle.size};
  req.dst_device = handle.device_id;
  req.dst = handle.segment();
  req.size = handle.size;
  req.issue_time = sim_.now();
  req.tag = tag;
  const std::uint64_t generation = handle.generation;
  return net_.schedule_transfer(
      req,
      [this, generation, content, done = std::move(done)](const ScheduledTransfer&) {
        if (auto it = placement_.find(generation); it != placement_.end()) {
          it->second.content = content;
        }
        if (done) done();
      },
      Issuer::Application, generation);
}

std::optional<ScheduledTransfer> HarvestRuntime::copy_from_peer(
    const HarvestHandle& handle, DeviceId dst_device, std::function<void(std::uint64_t)> done,
    std::uint64_t tag) {
  PlacementEntry* entry = find_entry(handle);
  if (!entry || entry->state == EntryState::Invalidated) return std::nullopt;
  entry->last_access = sim_.now();
  TransferRequest req;
  req.src_device = handle.device_id;
  req.src = handle.segment();
  req.dst_device = dst_device;
  req.dst = {0, handle.size};
  req.size = handle.size;
  req.issue_time = sim_.now();
  req.tag = tag;
  const std::uint64_t generation = handle.generation;
  return net_.schedule_transfer(
      req,
      [this, generation, done = std::move(done)](const ScheduledTransfer&) {
        std::uint64_t content = kUnwrittenContent;
        if (auto it = placement_.find(generation); it != placement_.end() && it->second.content) {
          content = *it->second.content;
        }
        if (done) done(content);
      },
      Issuer::Application, generation);
}

std::vector<DeviceId> HarvestRuntime::peer_ids() const {
  std::vector<DeviceId> ids;
  for (const auto& [id, p] : peers_) ids.push_back(id);
  return ids;
}

const DeviceState& HarvestRuntime::device(DeviceId id) const { return peer(id).state; }

Bytes HarvestRuntime::external_claimed(DeviceId id) const {
  Bytes total = 0;
  for (const auto& s : peer(id).external) total += s.size;
  return total;
}

Bytes HarvestRuntime::pending_external_demand(DeviceId id) const { return peer(id).pending_demand; }

std::size_t HarvestRuntime::live_handles() const {
  return static_cast<std::size_t>(std::count_if(placement_.begin(), placement_.end(), [](const auto& kv) {
    return kv.second.state != EntryState::Invalidated;
  }));
}

std::vector<HarvestHandle> HarvestRuntime::live_handles_on(DeviceId id) const {
  std::vector<HarvestHandle> out;
  for (const auto& [gen, e] : placement_) {
    if (e.handle.device_id == id && e.state != EntryState::Invalidated) out.push_back(e.handle);
  }
  return out;
}

std::string HarvestRuntime::check_invariants() const {
  for (const auto& [id, p] : peers_) {
    if (auto err = p.state.check_invariants(); !err.empty()) {
      return "device " + std::to_string(id) + ": " + err;
    }
    std::vector<Segment> expected = p.external;
    for (const auto& [gen, e] : placement_) {
      if (e.handle.device_id == id) expected.push_back(e.handle.segment());
    }
    std::sort(expected.begin(), expected.end());
    if (expected != p.state.allocated_segments()) {
      return "device " + std::to_string(id) + ": placement map and allocations disagree";
    }
  }
  return {};
}

}  // namespace harvest
