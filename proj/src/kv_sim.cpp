// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/kv_sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <tuple>

#include "harvest/hash.hpp"

namespace harvest {

void KVModelSpec::validate() const {
  if (bytes_per_entry == 0) throw InvalidSpec("kv model '" + name + "': bytes_per_entry must be > 0");
  if (!(recompute_time_per_entry >= 0.0)) {
    throw InvalidSpec("kv model '" + name + "': recompute_time_per_entry must be >= 0");
  }
}

std::string_view to_string(KVTier tier) {
  switch (tier) {
    case KVTier::Local: return "local";
    case KVTier::Peer: return "peer";
    case KVTier::Host: return "host";
    case KVTier::NotMaterialized: return "not_materialized";
  }
  return "unknown";
}

EvictionOrder parse_eviction_order(std::string_view text) {
  if (text == "lru") return EvictionOrder::LRU;
  if (text == "fifo") return EvictionOrder::FIFO;
  if (text == "sequence_tail") return EvictionOrder::SequenceTail;
  throw ConfigError("unknown eviction order '" + std::string(text) +
                    "' (expected lru, fifo or sequence_tail)");
}

void OffloadPolicy::validate() const {
  if (!(local_watermark > 0.0 && local_watermark <= 1.0)) {
    throw InvalidSpec("offload policy: local_watermark must be in (0, 1]");
  }
}

std::string_view to_string(FallbackPlan plan) {
  return plan == FallbackPlan::FetchFromHost ? "fetch_from_host" : "recompute";
}

std::uint64_t kv_content(int sequence_id, int index, int entries) {
  return hash_values(0x4B5643414348450AULL, sequence_id, index, entries);
}

double host_fetch_cost(const KVBlock& block, const KVModelSpec& model, const LinkParams& host) {
  return transfer_time(host, static_cast<Bytes>(block.entries) * model.bytes_per_entry);
}

double recompute_cost(const KVBlock& block, const KVModelSpec& model) {
  return block.entries * model.recompute_time_per_entry;
}

FallbackPlan resolve_fallback(const KVBlock& block, bool has_host_copy, const KVModelSpec& model,
                              const LinkParams& host) {
  if (!has_host_copy) return FallbackPlan::Recompute;
  return host_fetch_cost(block, model, host) <= recompute_cost(block, model)
             ? FallbackPlan::FetchFromHost
             : FallbackPlan::Recompute;
}

namespace {

DeviceSpec local_budget_spec(const TopologyConfig& topology, const OffloadPolicy& policy) {
  const auto budget =
      static_cast<Bytes>(std::floor(static_cast<double>(topology.local_capacity) * policy.local_watermark));
  return {kComputeDevice, Tier::LocalHBM, budget, 0, 0};
}

}  // namespace

KVCacheSim::KVCacheSim(KVModelSpec model, const TopologyConfig& topology, OffloadPolicy policy,
                       PolicyConfig runtime_policy, int block_size)
    : model_(std::move(model)),
      policy_(policy),
      block_size_(block_size),
      host_link_(topology.host_link),
      local_(local_budget_spec(topology, policy)),
      host_(DeviceSpec{0, Tier::HostDRAM, topology.host_capacity, 0, 0}) {
  model_.validate();
  policy_.validate();
  if (block_size_ < 1) throw InvalidSpec("kv block size must be >= 1");
  if (local_.spec().capacity < block_bytes()) {
    throw InvalidSpec("local KV budget is smaller than one block");
  }
  sim_ = std::make_unique<Simulation>();
  net_ = std::make_unique<Interconnect>(*sim_, make_topology(topology));
  runtime_ = std::make_unique<HarvestRuntime>(*sim_, *net_, runtime_policy);
  host_id_ = net_->topology().devices_with_tier(Tier::HostDRAM).at(0);
}

BlockEntry& KVCacheSim::entry(std::uint64_t block_id) {
  auto it = blocks_.find(block_id);
  if (it == blocks_.end()) throw InvalidSpec("unknown kv block " + std::to_string(block_id));
  return it->second;
}

const BlockEntry& KVCacheSim::block(std::uint64_t block_id) const {
  auto it = blocks_.find(block_id);
  if (it == blocks_.end()) throw InvalidSpec("unknown kv block " + std::to_string(block_id));
  return it->second;
}

std::vector<std::uint64_t> KVCacheSim::sequence_blocks(int sequence_id) const {
  auto it = sequences_.find(sequence_id);
  return it == sequences_.end() ? std::vector<std::uint64_t>{} : it->second.blocks;
}

std::size_t KVCacheSim::count(KVTier tier) const {
  return static_cast<std::size_t>(std::count_if(
      blocks_.begin(), blocks_.end(), [tier](const auto& kv) { return kv.second.tier == tier; }));
}

void KVCacheSim::log_block(EventKind kind, const BlockEntry& e, std::uint64_t aux) {
  LogRecord r;
  r.kind = kind;
  r.id = e.block.block_id;
  r.aux = aux;
  r.size = static_cast<Bytes>(e.block.entries) * model_.bytes_per_entry;
  if (e.handle) {
    r.device = e.handle->device_id;
    r.generation = e.handle->generation;
  }
  sim_->record(r);
}

std::optional<Segment> KVCacheSim::host_alloc(Bytes size) { return host_.alloc_best_fit(size); }

void KVCacheSim::append_kv(int sequence_id, int tokens, Durability durability,
                           std::function<void()> done) {
  if (tokens <= 0) throw InvalidSpec("append_kv: tokens must be > 0");
  auto [it, inserted] = sequences_.try_emplace(sequence_id);
  if (inserted) it->second.durability = durability;
  append_step(sequence_id, tokens, std::move(done));
}

void KVCacheSim::append_step(int sequence_id, int remaining, std::function<void()> done,
                             std::optional<Segment> reserved) {
  Sequence& seq = sequences_.at(sequence_id);
  while (remaining > 0) {
    if (!seq.blocks.empty()) {
      BlockEntry& tail = entry(seq.blocks.back());
      if (tail.tier == KVTier::Local && !tail.in_flight && tail.block.entries < block_size_) {
        const int n = std::min(remaining, block_size_ - tail.block.entries);
        tail.block.entries += n;
        tail.block.content_hash = kv_content(sequence_id, tail.block.index, tail.block.entries);
        tail.last_access = sim_->now();
        if (tail.host_copy) {  // the host copy no longer matches
          host_.free_segment(*tail.host_copy);
          tail.host_copy.reset();
        }
        remaining -= n;
        continue;
      }
    }
    std::optional<Segment> segment = reserved;
    reserved.reset();
    if (!segment && space_waiters_.empty()) segment = local_.alloc_best_fit(block_bytes());
    if (!segment) {
      with_local_space([this, sequence_id, remaining, done = std::move(done)](Segment seg) mutable {
        append_step(sequence_id, remaining, std::move(done), seg);
      });
      return;
    }
    BlockEntry e;
    e.block.block_id = next_block_id_++;
    e.block.sequence_id = sequence_id;
    e.block.index = static_cast<int>(seq.blocks.size());
    e.block.entries = 0;
    e.block.durability = seq.durability;
    e.tier = KVTier::Local;
    e.local = *segment;
    e.created = sim_->now();
    e.last_access = sim_->now();
    seq.blocks.push_back(e.block.block_id);
    blocks_.emplace(e.block.block_id, std::move(e));
  }
  if (done) done();
}

void KVCacheSim::with_local_space(std::function<void(Segment)> next) {
  if (space_waiters_.empty()) {
    if (auto seg = local_.alloc_best_fit(block_bytes())) {
      next(*seg);
      return;
    }
  }
  space_waiters_.push_back([this, next = std::move(next)]() mutable {
    auto seg = local_.alloc_best_fit(block_bytes());
    next(*seg);
  });
  serve_waiters();
}

void KVCacheSim::serve_waiters() {
  while (true) {
    while (!space_waiters_.empty() && local_.find_best_fit(block_bytes())) {
      auto waiter = std::move(space_waiters_.front());
      space_waiters_.erase(space_waiters_.begin());
      waiter();
    }
    if (space_waiters_.empty()) return;
    const Bytes want = block_bytes() * space_waiters_.size();
    if (evicting_bytes_ >= want) return;
    // Evictions of blocks with an unchanged host copy free space at once.
    const auto chosen = evict(want - evicting_bytes_);
    if (chosen.empty() || !local_.find_best_fit(block_bytes())) break;
  }
  // Reloads holding a segment become evictable once they land.
  if (evicting_bytes_ == 0 && landing_reloads_ == 0) {
    throw TierExhausted("local KV budget exhausted: no evictable block");
  }
}

void KVCacheSim::on_local_freed() {
  sim_->schedule_after(0, [this]() { serve_waiters(); });
}

void KVCacheSim::release_local(BlockEntry& e) {
  if (e.local) {
    local_.free_segment(*e.local);
    e.local.reset();
  }
  evicting_bytes_ -= block_bytes();
  on_local_freed();
}

std::vector<std::uint64_t> KVCacheSim::evict(Bytes bytes_needed) {
  std::vector<BlockEntry*> candidates;
  for (auto& [id, e] : blocks_) {
    if (e.tier == KVTier::Local && !e.in_flight && e.pins == 0 && e.local) candidates.push_back(&e);
  }
  auto key = [this](const BlockEntry* e) {
    switch (policy_.order) {
      case EvictionOrder::LRU: return std::make_tuple(0, e->last_access, e->block.block_id);
      case EvictionOrder::FIFO: return std::make_tuple(0, e->created, e->block.block_id);
      case EvictionOrder::SequenceTail:
        return std::make_tuple(-e->block.index, e->last_access, e->block.block_id);
    }
    return std::make_tuple(0, e->last_access, e->block.block_id);
  };
  std::sort(candidates.begin(), candidates.end(),
            [&](const BlockEntry* a, const BlockEntry* b) { return key(a) < key(b); });
  std::vector<std::uint64_t> chosen;
  Bytes planned = 0;
  for (BlockEntry* e : candidates) {
    if (planned >= bytes_needed) break;
    chosen.push_back(e->block.block_id);
    planned += block_bytes();
    evict_block(*e);
  }
  return chosen;
}

void KVCacheSim::evict_block(BlockEntry& e) {
  const std::uint64_t id = e.block.block_id;
  const Bytes data = static_cast<Bytes>(e.block.entries) * model_.bytes_per_entry;
  e.in_flight = true;
  evicting_bytes_ += block_bytes();

  auto to_host = [this, id, data]() {
    BlockEntry& b = entry(id);
    TransferRequest req;
    req.src_device = kComputeDevice;
    req.src = *b.local;
    req.dst_device = host_id_;
    req.dst = *b.host_copy;
    req.size = data;
    req.issue_time = sim_->now();
    req.tag = id;
    ++stats_.host_transfers;
    return req;
  };

  AllocationHints hints;
  hints.durability = e.block.durability;
  hints.client_id = "kv";
  hints.object_tag = id;
  auto handle = data > 0 ? runtime_->harvest_alloc(data, hints) : std::nullopt;
  if (handle) {
    e.handle = handle;
    runtime_->harvest_register_cb(
        *handle, [this, id](const HarvestHandle& h, RevokeReason) { on_revoked(id, h); });
    const bool need_host_copy = e.block.durability == Durability::Backed && !e.host_copy;
    if (need_host_copy) {
      e.host_copy = host_alloc(data);
      if (!e.host_copy) throw TierExhausted("host DRAM cannot hold a backed KV block");
    }
    auto parts = std::make_shared<int>(need_host_copy ? 2 : 1);
    const std::uint64_t content = e.block.content_hash;
    auto part_done = [this, id, parts, content]() {
      BlockEntry& b = entry(id);
      if (--*parts > 0) return;
      b.in_flight = false;
      if (b.host_copy) b.host_content = content;
      b.tier = b.handle ? KVTier::Peer : (b.host_copy ? KVTier::Host : KVTier::NotMaterialized);
      release_local(b);
    };
    log_block(EventKind::Eviction, e, static_cast<std::uint64_t>(KVTier::Peer));
    ++stats_.evictions_to_peer;
    runtime_->copy_to_peer(*handle, kComputeDevice, content, part_done, id);
    if (need_host_copy) net_->schedule_transfer(to_host(), [part_done](const ScheduledTransfer&) { part_done(); });
    return;
  }

  if (e.host_copy) {
    // An unchanged host copy already exists.
    e.in_flight = false;
    e.tier = KVTier::Host;
    log_block(EventKind::Eviction, e, static_cast<std::uint64_t>(KVTier::Host));
    ++stats_.evictions_to_host;
    release_local(e);
    return;
  }
  e.host_copy = host_alloc(data);
  if (!e.host_copy) {
    if (e.block.durability == Durability::Backed) {
      throw TierExhausted("neither peer nor host can hold backed KV block " + std::to_string(id));
    }
    e.in_flight = false;
    e.tier = KVTier::NotMaterialized;
    log_block(EventKind::Eviction, e, static_cast<std::uint64_t>(KVTier::NotMaterialized));
    ++stats_.dropped;
    release_local(e);
    return;
  }
  log_block(EventKind::Eviction, e, static_cast<std::uint64_t>(KVTier::Host));
  ++stats_.evictions_to_host;
  const std::uint64_t content = e.block.content_hash;
  net_->schedule_transfer(to_host(), [this, id, content](const ScheduledTransfer&) {
    BlockEntry& b = entry(id);
    b.in_flight = false;
    b.host_content = content;
    b.tier = KVTier::Host;
    release_local(b);
  });
}

void KVCacheSim::on_revoked(std::uint64_t block_id, const HarvestHandle& handle) {
  BlockEntry& e = entry(block_id);
  if (!e.handle || !(*e.handle == handle)) return;
  e.handle.reset();
  log_block(EventKind::Note, e, 1);
  if (e.tier == KVTier::Peer) e.tier = e.host_copy ? KVTier::Host : KVTier::NotMaterialized;
}

void KVCacheSim::reload(std::uint64_t block_id, std::function<void(std::uint64_t)> done) {
  BlockEntry& e = entry(block_id);
  if (e.tier == KVTier::Local) throw InvalidSpec("reload: block is already local");
  if (e.in_flight) throw InvalidSpec("reload: block is already moving");
  e.in_flight = true;
  with_local_space([this, block_id, done = std::move(done)](Segment seg) mutable {
    BlockEntry& b = entry(block_id);
    b.local = seg;
    ++landing_reloads_;
    if (b.tier == KVTier::Peer && b.handle) {
      const HarvestHandle h = *b.handle;
      auto scheduled = runtime_->copy_from_peer(
          h, kComputeDevice,
          [this, block_id, h, done](std::uint64_t content) mutable {
            BlockEntry& r = entry(block_id);
            if (r.handle && *r.handle == h) r.handle.reset();
            runtime_->harvest_free(h);
            ++stats_.reloads_from_peer;
            finish_reload(block_id, content, std::move(done));
          },
          block_id);
      if (scheduled) return;
      ++stats_.peer_misses;
    }
    fallback_reload(block_id, seg, std::move(done));
  });
}

void KVCacheSim::fallback_reload(std::uint64_t block_id, Segment local,
                                 std::function<void(std::uint64_t)> done) {
  BlockEntry& e = entry(block_id);
  const FallbackPlan plan = e.tier == KVTier::NotMaterialized
                                ? FallbackPlan::Recompute
                                : resolve_fallback(e.block, e.host_copy.has_value(), model_, host_link_);
  if (plan == FallbackPlan::FetchFromHost) {
    TransferRequest req;
    req.src_device = host_id_;
    req.src = *e.host_copy;
    req.dst_device = kComputeDevice;
    req.dst = local;
    req.size = static_cast<Bytes>(e.block.entries) * model_.bytes_per_entry;
    req.issue_time = sim_->now();
    req.tag = block_id;
    ++stats_.host_transfers;
    net_->schedule_transfer(req, [this, block_id, done = std::move(done)](const ScheduledTransfer&) mutable {
      BlockEntry& b = entry(block_id);
      const std::uint64_t content = b.host_content;
      if (b.block.durability == Durability::Lossy && b.host_copy) {
        host_.free_segment(*b.host_copy);
        b.host_copy.reset();
      }
      ++stats_.reloads_from_host;
      finish_reload(block_id, content, std::move(done));
    });
    return;
  }
  const SimTime delay = to_sim_time(recompute_cost(e.block, model_));
  sim_->schedule_after(delay, [this, block_id, done = std::move(done)]() mutable {
    BlockEntry& b = entry(block_id);
    log_block(EventKind::Reconstruct, b);
    ++stats_.recomputes;
    finish_reload(block_id, kv_content(b.block.sequence_id, b.block.index, b.block.entries),
                  std::move(done));
  });
}

void KVCacheSim::finish_reload(std::uint64_t block_id, std::uint64_t content,
                               std::function<void(std::uint64_t)> done) {
  BlockEntry& e = entry(block_id);
  e.tier = KVTier::Local;
  e.in_flight = false;
  e.block.content_hash = content;
  e.last_access = sim_->now();
  log_block(EventKind::Reload, e);
  --landing_reloads_;
  if (!space_waiters_.empty()) on_local_freed();
  if (done) done(content);
}

void KVCacheSim::access_sequence(int sequence_id,
                                 std::function<void(std::vector<std::uint64_t>)> done) {
  const auto ids = sequence_blocks(sequence_id);
  auto contents = std::make_shared<std::vector<std::uint64_t>>(ids.size(), 0);
  auto outstanding = std::make_shared<std::size_t>(1);
  auto finish = [contents, outstanding, done]() {
    if (--*outstanding == 0 && done) done(*contents);
  };
  for (std::uint64_t id : ids) ++entry(id).pins;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    BlockEntry& e = entry(ids[i]);
    if (e.tier == KVTier::Local) {
      (*contents)[i] = e.block.content_hash;
      e.last_access = sim_->now();
      continue;
    }
    ++*outstanding;
    reload(ids[i], [contents, i, finish](std::uint64_t content) {
      (*contents)[i] = content;
      finish();
    });
  }
  finish();
}

void KVCacheSim::unpin_sequence(int sequence_id) {
  for (std::uint64_t id : sequence_blocks(sequence_id)) {
    BlockEntry& e = entry(id);
    if (e.pins > 0) --e.pins;
  }
}

void KVCacheSim::dump(std::ostream& out) const {
  for (const auto& [id, e] : blocks_) {
    out << "block=" << id << " seq=" << e.block.sequence_id << " idx=" << e.block.index
        << " entries=" << e.block.entries << " tier=" << to_string(e.tier)
        << " durability=" << to_string(e.block.durability) << " handle=";
    if (e.handle) {
      out << e.handle->device_id << ':' << e.handle->base << ':' << e.handle->size << ':'
          << e.handle->generation;
    } else {
      out << '-';
    }
    out << " host_copy=" << (e.host_copy ? 1 : 0) << " in_flight=" << (e.in_flight ? 1 : 0)
        << " last_access=" << e.last_access << '\n';
  }
}

std::string KVCacheSim::check_invariants() const {
  Bytes local_total = 0;
  for (const auto& [id, e] : blocks_) {
    const std::string where = "block " + std::to_string(id) + ": ";
    if (e.tier == KVTier::Peer && !e.handle) return where + "peer tier without a handle";
    if (e.tier == KVTier::Local && !e.local) return where + "local tier without a local segment";
    if (e.tier == KVTier::Host && !e.host_copy) return where + "host tier without a host copy";
    if (e.tier == KVTier::NotMaterialized && e.block.durability == Durability::Backed) {
      return where + "backed block lost";
    }
    if (e.local) local_total += e.local->size;
  }
  if (local_total != local_.allocated_total()) return "local budget accounting mismatch";
  if (auto err = local_.check_invariants(); !err.empty()) return "local budget: " + err;
  return runtime_->check_invariants();
}

KVWorkloadResult run_kv_workload(KVCacheSim& cache, const KVWorkload& workload) {
  struct State {
    std::uint64_t digest = 0;
    bool finished = false;
    std::function<void(int)> prompt;
    std::function<void(int, int)> decode;
  };
  auto st = std::make_shared<State>();
  const SimTime start = cache.sim().now();
  KVCacheSim* c = &cache;

  st->decode = [c, st, workload](int step, int seq) {
    if (seq == workload.sequences) {
      ++step;
      seq = 0;
    }
    if (step >= workload.decode_steps || workload.sequences == 0) {
      st->finished = true;
      return;
    }
    c->access_sequence(seq, [c, st, step, seq, workload](std::vector<std::uint64_t> contents) {
      for (std::size_t i = 0; i < contents.size(); ++i) {
        st->digest += hash_values(static_cast<std::uint64_t>(step), seq, i, contents[i]);
      }
      c->append_kv(seq, 1, workload.durability, [c, st, step, seq]() {
        c->unpin_sequence(seq);
        st->decode(step, seq + 1);
      });
    });
  };
  st->prompt = [c, st, workload](int seq) {
    if (seq == workload.sequences) {
      st->decode(0, 0);
      return;
    }
    c->append_kv(seq, std::max(1, workload.prompt_tokens), workload.durability,
                 [st, seq]() { st->prompt(seq + 1); });
  };

  st->prompt(0);
  while (!st->finished && cache.sim().step()) {
  }
  if (!st->finished) throw HarvestError("kv workload stalled");
  // Break the self-referencing closures.
  st->prompt = nullptr;
  st->decode = nullptr;

  KVWorkloadResult result;
  result.digest = st->digest;
  result.elapsed_s = to_seconds(cache.sim().now() - start);
  result.stats = cache.stats();
  return result;
}

std::vector<ReloadRow> reload_latency_experiment(std::span<const KVModelSpec> models,
                                                 std::span<const int> entry_counts,
                                                 const LinkParams& peer, const LinkParams& host) {
  std::vector<ReloadRow> rows;
  for (const auto& m : models) {
    m.validate();
    for (int n : entry_counts) {
      if (n < 0) throw InvalidSpec("entry counts must be >= 0");
      const Bytes bytes = static_cast<Bytes>(n) * m.bytes_per_entry;
      ReloadRow row;
      row.model = m.name;
      row.entries = n;
      row.host_s = transfer_time(host, bytes);
      row.peer_s = transfer_time(peer, bytes);
      row.speedup = row.host_s / row.peer_s;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace harvest
