// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/moe_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "harvest/hash.hpp"

namespace harvest {

void MoEModelSpec::validate() const {
  if (num_layers < 1) throw InvalidSpec("moe model '" + name + "': num_layers must be >= 1");
  if (num_experts < 1) throw InvalidSpec("moe model '" + name + "': num_experts must be >= 1");
  if (top_k < 1 || top_k > num_experts) {
    throw InvalidSpec("moe model '" + name + "': top_k must be in [1, num_experts]");
  }
  if (expert_size == 0) throw InvalidSpec("moe model '" + name + "': expert_size must be > 0");
  if (!(compute_time_per_microbatch > 0.0)) {
    throw InvalidSpec("moe model '" + name + "': compute_time_per_microbatch must be > 0");
  }
}

void PipelineConfig::validate() const {
  if (microbatch_tokens < 1) throw InvalidSpec("pipeline: microbatch_tokens must be >= 1");
  if (num_microbatches < 1) throw InvalidSpec("pipeline: num_microbatches must be >= 1");
  if (decode_steps < 1) throw InvalidSpec("pipeline: decode_steps must be >= 1");
  if (local_cache_experts < 0) throw InvalidSpec("pipeline: local_cache_experts must be >= 0");
}

std::vector<double> zipf_weights(int n, double skew) {
  if (n < 1) return {};
  if (skew < 0.0) throw InvalidSpec("zipf skew must be >= 0");
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) w[r] = std::pow(static_cast<double>(r + 1), -skew);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

std::vector<int> sample_without_replacement(std::span<const double> weights, int k,
                                            std::mt19937_64& rng) {
  const int n = static_cast<int>(weights.size());
  k = std::clamp(k, 0, n);
  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(k));
  std::vector<char> used(weights.size(), 0);
  for (int j = 0; j < k; ++j) {
    double remaining = 0.0;
    int last = -1;
    for (int i = 0; i < n; ++i) {
      if (!used[i]) {
        remaining += weights[i];
        last = i;
      }
    }
    const double u = unit_interval(rng()) * remaining;
    int pick = last;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      if (used[i]) continue;
      acc += weights[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    used[pick] = 1;
    chosen.push_back(pick);
  }
  return chosen;
}

std::vector<std::vector<std::uint64_t>> RoutingTrace::activation_counts(std::size_t first,
                                                                        std::size_t last) const {
  std::vector<std::vector<std::uint64_t>> counts(
      static_cast<std::size_t>(num_layers), std::vector<std::uint64_t>(num_experts, 0));
  last = std::min(last, activated.size());
  for (std::size_t mb = first; mb < last; ++mb) {
    for (int layer = 0; layer < num_layers; ++layer) {
      for (int e : activated[mb][layer]) ++counts[layer][e];
    }
  }
  return counts;
}

namespace {

void shuffle(std::vector<int>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

RoutingTrace generate_routing(const MoEModelSpec& model, const PipelineConfig& pipeline,
                              const RoutingConfig& routing, std::uint64_t seed) {
  model.validate();
  pipeline.validate();
  const int L = model.num_layers;
  const int E = model.num_experts;
  const auto weights = zipf_weights(E, routing.skew);
  std::mt19937_64 rng(seed);

  // rank_to_expert[layer][rank]
  std::vector<std::vector<int>> rank_to_expert(static_cast<std::size_t>(L), std::vector<int>(E));
  for (auto& perm : rank_to_expert) {
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
  }

  RoutingTrace trace;
  trace.num_layers = L;
  trace.num_experts = E;
  trace.microbatch_tokens = pipeline.microbatch_tokens;
  trace.token_counts.assign(static_cast<std::size_t>(L), std::vector<std::uint64_t>(E, 0));
  const std::size_t total_mb =
      static_cast<std::size_t>(pipeline.decode_steps) * static_cast<std::size_t>(pipeline.num_microbatches);
  trace.activated.resize(total_mb);

  std::vector<char> hit(static_cast<std::size_t>(E));
  for (std::size_t mb = 0; mb < total_mb; ++mb) {
    if (routing.drift_period > 0 && mb > 0 && mb % static_cast<std::size_t>(routing.drift_period) == 0) {
      for (auto& perm : rank_to_expert) shuffle(perm, rng);
    }
    trace.activated[mb].resize(static_cast<std::size_t>(L));
    for (int layer = 0; layer < L; ++layer) {
      std::fill(hit.begin(), hit.end(), 0);
      for (int t = 0; t < pipeline.microbatch_tokens; ++t) {
        for (int rank : sample_without_replacement(weights, model.top_k, rng)) {
          const int e = rank_to_expert[layer][rank];
          hit[e] = 1;
          ++trace.token_counts[layer][e];
        }
      }
      auto& set = trace.activated[mb][layer];
      for (int e = 0; e < E; ++e) {
        if (hit[e]) set.push_back(e);
      }
    }
  }
  return trace;
}

ExpertResidency::ExpertResidency(int num_layers, int num_experts)
    : num_layers_(num_layers),
      num_experts_(num_experts),
      entries_(static_cast<std::size_t>(num_layers) * static_cast<std::size_t>(num_experts)) {}

ExpertLocation& ExpertResidency::at(int layer, int expert) {
  return entries_.at(static_cast<std::size_t>(layer) * num_experts_ + expert);
}

const ExpertLocation& ExpertResidency::at(int layer, int expert) const {
  return entries_.at(static_cast<std::size_t>(layer) * num_experts_ + expert);
}

std::size_t ExpertResidency::count(Tier tier) const {
  return static_cast<std::size_t>(std::count_if(
      entries_.begin(), entries_.end(), [tier](const ExpertLocation& l) { return l.tier == tier; }));
}

std::uint64_t expert_content(int layer, int expert) {
  return hash_values(0x4558504552545321ULL, layer, expert);
}

MoEDecodeSim::MoEDecodeSim(MoEModelSpec model, PipelineConfig pipeline,
                           const TopologyConfig& topology, PolicyConfig policy)
    : model_(std::move(model)), pipeline_(pipeline) {
  model_.validate();
  pipeline_.validate();
  sim_ = std::make_unique<Simulation>();
  net_ = std::make_unique<Interconnect>(*sim_, make_topology(topology));
  runtime_ = std::make_unique<HarvestRuntime>(*sim_, *net_, policy);
  residency_ = ExpertResidency(model_.num_layers, model_.num_experts);
  host_ = net_->topology().devices_with_tier(Tier::HostDRAM).at(0);
}

void MoEDecodeSim::pin_local(int layer, int expert) {
  auto& loc = residency_.at(layer, expert);
  loc.tier = Tier::LocalHBM;
}

std::optional<Migration> MoEDecodeSim::migrate(int layer, int expert) {
  AllocationHints hints;
  hints.durability = Durability::Backed;
  hints.client_id = "moe";
  hints.object_tag = static_cast<std::uint64_t>(layer) * model_.num_experts + expert;
  auto handle = runtime_->harvest_alloc(model_.expert_size, hints);
  if (!handle) return std::nullopt;

  auto& loc = residency_.at(layer, expert);
  loc.handle = handle;
  loc.migrating = true;
  runtime_->harvest_register_cb(*handle, [this, layer, expert](const HarvestHandle& revoked,
                                                                RevokeReason) {
    auto& l = residency_.at(layer, expert);
    if (!l.handle || !(*l.handle == revoked)) return;
    if (l.tier == Tier::PeerHBM) l.tier = Tier::HostDRAM;
    l.handle.reset();
    l.migrating = false;
  });

  LogRecord r;
  r.kind = EventKind::Migration;
  r.device = handle->device_id;
  r.generation = handle->generation;
  r.id = hints.object_tag;
  r.size = handle->size;
  sim_->record(r);

  ++pending_migrations_;
  ++migrations_started_;
  const HarvestHandle h = *handle;
  auto scheduled = runtime_->copy_to_peer(
      h, host_, expert_content(layer, expert),
      [this, layer, expert, h]() {
        --pending_migrations_;
        auto& l = residency_.at(layer, expert);
        if (!l.handle || !(*l.handle == h)) return;
        l.migrating = false;
        if (runtime_->is_live(h)) l.tier = Tier::PeerHBM;
      },
      hints.object_tag);
  if (!scheduled) {
    --pending_migrations_;
    loc.handle.reset();
    loc.migrating = false;
  }
  return Migration{layer, expert, h};
}

std::vector<Migration> MoEDecodeSim::rebalance(
    const std::vector<std::vector<std::uint64_t>>& counts) {
  struct Candidate {
    std::uint64_t count;
    int layer;
    int expert;
  };
  std::vector<Candidate> candidates;
  for (int layer = 0; layer < model_.num_layers; ++layer) {
    for (int e = 0; e < model_.num_experts; ++e) {
      const auto& loc = residency_.at(layer, e);
      const std::uint64_t c = counts.at(layer).at(e);
      if (loc.tier == Tier::HostDRAM && !loc.migrating && c > 0) candidates.push_back({c, layer, e});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.expert < b.expert;
  });
  std::vector<Migration> out;
  for (const auto& c : candidates) {
    auto m = migrate(c.layer, c.expert);
    if (!m) break;
    out.push_back(*m);
  }
  return out;
}

void MoEDecodeSim::run_until_settled() {
  while (pending_migrations_ > 0 && sim_->step()) {
  }
}

void MoEDecodeSim::place_offload(const RoutingTrace& trace, double fraction, Tier tier) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidSpec("offload fraction must be in [0, 1]");
  const int E = model_.num_experts;
  const auto offloaded = static_cast<int>(std::llround(fraction * E));
  for (int layer = 0; layer < model_.num_layers; ++layer) {
    std::vector<int> order(static_cast<std::size_t>(E));
    std::iota(order.begin(), order.end(), 0);
    const auto& counts = trace.token_counts.at(layer);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return counts[a] < counts[b]; });
    for (int i = 0; i < E; ++i) {
      const int e = order[i];
      auto& loc = residency_.at(layer, e);
      if (i >= offloaded || tier == Tier::LocalHBM) {
        loc.tier = Tier::LocalHBM;
      } else {
        loc.tier = Tier::HostDRAM;
        if (tier == Tier::PeerHBM) migrate(layer, e);
      }
    }
  }
  run_until_settled();
}

namespace {

struct RunState {
  std::size_t stages = 0;
  std::vector<int> outstanding;
  std::vector<char> prev_done;
  std::vector<char> started;
  std::vector<SimTime> start_time;
  SimTime t0 = 0;
  SimTime last_end = 0;
  bool finished = false;
  DecodeMetrics metrics;
};

}  // namespace

DecodeMetrics MoEDecodeSim::run(const RoutingTrace& trace, const DecodeOptions& options) {
  const int L = model_.num_layers;
  const int b = pipeline_.num_microbatches;
  if (trace.num_layers != L || trace.num_experts != model_.num_experts) {
    throw InvalidSpec("routing trace does not match model '" + model_.name + "'");
  }
  if (trace.num_microbatches() == 0 || trace.num_microbatches() % static_cast<std::size_t>(b) != 0) {
    throw InvalidSpec("routing trace length must be a positive multiple of num_microbatches");
  }
  const SimTime compute = to_sim_time(model_.compute_time_per_microbatch);
  const std::size_t per_step = static_cast<std::size_t>(L) * b;

  auto st = std::make_shared<RunState>();
  st->stages = trace.num_microbatches() * L;
  st->outstanding.assign(st->stages, 0);
  st->prev_done.assign(st->stages, 0);
  st->started.assign(st->stages, 0);
  st->start_time.assign(st->stages, 0);
  st->t0 = sim_->now();
  const std::uint64_t migrations_before = migrations_started_;

  auto layer_of = [=](std::size_t s) { return static_cast<int>((s % per_step) / b); };
  auto microbatch_of = [=](std::size_t s) { return (s / per_step) * b + (s % per_step) % b; };

  // Declared up front so the lambdas can refer to each other.
  std::function<void(std::size_t)> try_start;
  std::function<void(std::size_t)> start_stage;

  auto fetch_done = [this, st, &try_start](std::size_t s, int layer, int expert,
                                           std::uint64_t content) {
    LogRecord r;
    r.kind = EventKind::FetchComplete;
    r.id = s;
    r.aux = static_cast<std::uint64_t>(layer) * model_.num_experts + expert;
    sim_->record(r);
    st->metrics.digest += hash_values(s, layer, expert, content);
    if (--st->outstanding[s] == 0) try_start(s);
  };

  auto issue_fetches = [this, st, &trace, layer_of, microbatch_of, fetch_done](std::size_t s) {
    const int layer = layer_of(s);
    for (int e : trace.activated[microbatch_of(s)][layer]) {
      auto& loc = residency_.at(layer, e);
      if (loc.tier == Tier::LocalHBM) {
        st->metrics.digest += hash_values(s, layer, e, expert_content(layer, e));
        continue;
      }
      ++st->outstanding[s];
      const std::uint64_t key = static_cast<std::uint64_t>(layer) * model_.num_experts + e;
      LogRecord r;
      r.kind = EventKind::FetchIssue;
      r.id = s;
      r.aux = key;
      r.device = loc.tier == Tier::PeerHBM && loc.handle ? loc.handle->device_id : host_;
      sim_->record(r);
      if (loc.tier == Tier::PeerHBM && loc.handle) {
        auto scheduled = runtime_->copy_from_peer(
            *loc.handle, kComputeDevice,
            [fetch_done, s, layer, e](std::uint64_t content) { fetch_done(s, layer, e, content); },
            key);
        if (scheduled) {
          ++st->metrics.peer_fetches;
          continue;
        }
        ++st->metrics.fallback_fetches;
      }
      ++st->metrics.host_fetches;
      TransferRequest req;
      req.src_device = host_;
      req.src = {key * model_.expert_size, model_.expert_size};
      req.dst_device = kComputeDevice;
      req.dst = {0, model_.expert_size};
      req.size = model_.expert_size;
      req.issue_time = sim_->now();
      req.tag = key;
      const std::uint64_t content = expert_content(layer, e);
      net_->schedule_transfer(req, [fetch_done, s, layer, e, content](const ScheduledTransfer&) {
        fetch_done(s, layer, e, content);
      });
    }
  };

  try_start = [st, &start_stage](std::size_t s) {
    if (s < st->stages && !st->started[s] && st->prev_done[s] && st->outstanding[s] == 0) {
      start_stage(s);
    }
  };

  start_stage = [this, st, compute, &options, issue_fetches, layer_of, microbatch_of, &trace,
                 &try_start](std::size_t s) {
    st->started[s] = 1;
    st->start_time[s] = sim_->now();
    LogRecord r;
    r.kind = EventKind::StageStart;
    r.id = s;
    sim_->record(r);
    const std::size_t mb = microbatch_of(s);
    if (options.rebalance_period > 0 && layer_of(s) == 0 && mb > 0 &&
        mb % static_cast<std::size_t>(options.rebalance_period) == 0) {
      const std::size_t window = static_cast<std::size_t>(std::max(1, options.history_window));
      rebalance(trace.activation_counts(mb > window ? mb - window : 0, mb));
    }
    if (s + 1 < st->stages) issue_fetches(s + 1);
    sim_->schedule_after(compute, [this, st, s, &try_start]() {
      LogRecord end;
      end.kind = EventKind::StageEnd;
      end.id = s;
      sim_->record(end);
      if (s + 1 == st->stages) {
        st->finished = true;
        st->last_end = sim_->now();
        return;
      }
      st->prev_done[s + 1] = 1;
      try_start(s + 1);
    });
  };

  // Virtual prologue stage: issues stage 0's fetches and lasts one compute
  // time, so every stage is charged max(compute, its own fetch time).
  issue_fetches(0);
  sim_->schedule_after(compute, [st, &try_start]() {
    st->prev_done[0] = 1;
    try_start(0);
  });

  while (!st->finished && sim_->step()) {
  }
  if (!st->finished) throw HarvestError("decode pipeline stalled before the last stage");

  DecodeMetrics m = st->metrics;
  const SimTime elapsed = st->last_end - st->t0 - compute;
  m.elapsed_s = to_seconds(elapsed);
  m.tokens = static_cast<std::uint64_t>(trace.num_microbatches()) * trace.microbatch_tokens;
  m.tokens_per_s = elapsed > 0 ? static_cast<double>(m.tokens) / m.elapsed_s : 0.0;
  m.stall_s = to_seconds(elapsed - compute * static_cast<SimTime>(st->stages));
  m.microbatch_latency_s.resize(st->stages);
  for (std::size_t s = 0; s < st->stages; ++s) {
    const SimTime prev = s == 0 ? st->t0 : st->start_time[s - 1];
    m.microbatch_latency_s[s] = to_seconds(st->start_time[s] - prev);
  }
  m.migrations = migrations_started_ - migrations_before;
  return m;
}

std::vector<SweepRow> offload_sweep(const MoEModelSpec& model, const PipelineConfig& pipeline,
                                    const TopologyConfig& topology,
                                    std::span<const double> fractions_pct, Tier tier,
                                    const RoutingTrace& trace) {
  std::vector<SweepRow> rows;
  for (double pct : fractions_pct) {
    if (!(pct >= 0.0 && pct <= 100.0)) throw InvalidSpec("offload fraction must be in [0, 100]");
    MoEDecodeSim sim(model, pipeline, topology);
    sim.sim().log().set_enabled(false);
    sim.place_offload(trace, pct / 100.0, tier);
    const auto m = sim.run(trace);
    rows.push_back({pct, tier, m.tokens_per_s, m.stall_s});
  }
  return rows;
}

std::vector<SweepRow> offload_sweep(const MoEModelSpec& model, const PipelineConfig& pipeline,
                                    const TopologyConfig& topology,
                                    std::span<const double> fractions_pct, Tier tier,
                                    const RoutingConfig& routing, std::uint64_t seed) {
  const auto trace = generate_routing(model, pipeline, routing, seed);
  return offload_sweep(model, pipeline, topology, fractions_pct, tier, trace);
}

double peer_vs_host_speedup(const MoEModelSpec& model, const PipelineConfig& pipeline,
                            const TopologyConfig& topology, double fraction_pct,
                            const RoutingTrace& trace) {
  const double f[] = {fraction_pct};
  const auto peer = offload_sweep(model, pipeline, topology, f, Tier::PeerHBM, trace);
  const auto host = offload_sweep(model, pipeline, topology, f, Tier::HostDRAM, trace);
  return peer.front().tokens_per_s / host.front().tokens_per_s;
}

}  // namespace harvest
