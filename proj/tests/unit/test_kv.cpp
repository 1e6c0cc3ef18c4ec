// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>
#include <sstream>

#include "harvest/kv_sim.hpp"
#include "harvest/log_checks.hpp"
#include "harvest/profiles.hpp"

using namespace harvest;

namespace {

constexpr LinkParams kPeer{5e-6, 100e9};
constexpr LinkParams kHost{20e-6, 20e9};

KVModelSpec model(double recompute = 1e-3) {
  KVModelSpec m;
  m.name = "unit";
  m.bytes_per_entry = 1024;
  m.recompute_time_per_entry = recompute;
  return m;
}

// Block size 16 with 1 KiB entries: 16 KiB blocks.
TopologyConfig topo(int peers, Bytes local_blocks, Bytes peer_capacity = GiB,
                    Bytes host_capacity = GiB) {
  TopologyConfig cfg;
  cfg.local_capacity = local_blocks * 16 * KiB;
  for (int i = 0; i < peers; ++i) cfg.peers.push_back({0, Tier::PeerHBM, peer_capacity, 0, 0});
  cfg.host_capacity = host_capacity;
  cfg.peer_link = kPeer;
  cfg.host_link = kHost;
  return cfg;
}

OffloadPolicy full_budget() {
  OffloadPolicy p;
  p.local_watermark = 1.0;
  return p;
}

std::size_t count_kind(const KVCacheSim& kv, EventKind kind) {
  std::size_t n = 0;
  for (const auto& r : const_cast<KVCacheSim&>(kv).sim().log().records()) n += r.kind == kind;
  return n;
}

std::size_t transfers_touching(KVCacheSim& kv, DeviceId device) {
  std::size_t n = 0;
  for (const auto& r : kv.sim().log().records()) {
    n += r.kind == EventKind::TransferIssue && (r.device == device || r.peer == device);
  }
  return n;
}

}  // namespace

TEST_CASE("append fills blocks of block_size entries") {
  KVCacheSim kv(model(), topo(1, 64), full_budget());
  kv.append_kv(1, 16);
  auto blocks = kv.sequence_blocks(1);
  REQUIRE(blocks.size() == 1);
  CHECK(kv.block(blocks[0]).block.entries == 16);

  kv.append_kv(2, 17);
  blocks = kv.sequence_blocks(2);
  REQUIRE(blocks.size() == 2);
  CHECK(kv.block(blocks[0]).block.entries == 16);
  CHECK(kv.block(blocks[1]).block.entries == 1);
  CHECK(kv.block(blocks[1]).block.index == 1);
  CHECK(kv.block(blocks[1]).block.content_hash == kv_content(2, 1, 1));
  CHECK(kv.local_budget().allocated_total() == 3 * kv.block_bytes());
  CHECK_THROWS_AS(kv.append_kv(1, 0), InvalidSpec);
}

TEST_CASE("exceeding the local watermark triggers eviction") {
  OffloadPolicy p;
  p.local_watermark = 0.5;
  KVCacheSim kv(model(), topo(1, 10), p);
  kv.append_kv(1, 5 * 16);
  CHECK(count_kind(kv, EventKind::Eviction) == 0);
  bool done = false;
  kv.append_kv(1, 16, Durability::Lossy, [&] { done = true; });
  kv.sim().run();
  CHECK(done);
  CHECK(count_kind(kv, EventKind::Eviction) >= 1);
  CHECK(kv.local_budget().allocated_total() <= 5 * kv.block_bytes());
  CHECK(kv.check_invariants().empty());
}

TEST_CASE("LRU eviction picks the least recently accessed blocks") {
  KVCacheSim kv(model(), topo(1, 16), full_budget());
  for (int s = 0; s < 3; ++s) kv.append_kv(s, 16);
  auto touch = [&](int seq, SimTime t) {
    kv.sim().run_until(t);
    kv.access_sequence(seq, {});
    kv.unpin_sequence(seq);
  };
  touch(1, 10);
  touch(2, 20);
  touch(0, 30);
  const auto chosen = kv.evict(2 * kv.block_bytes());
  REQUIRE(chosen.size() == 2);
  CHECK(chosen[0] == kv.sequence_blocks(1)[0]);
  CHECK(chosen[1] == kv.sequence_blocks(2)[0]);
  kv.sim().run();
  CHECK(kv.block(chosen[0]).tier == KVTier::Peer);
  CHECK(kv.block(kv.sequence_blocks(0)[0]).tier == KVTier::Local);
}

TEST_CASE("evictions with peer space never touch the host link") {
  KVCacheSim kv(model(), topo(1, 16), full_budget());
  for (int s = 0; s < 8; ++s) kv.append_kv(s, 16);
  kv.evict(8 * kv.block_bytes());
  kv.sim().run();
  CHECK(kv.stats().evictions_to_peer == 8);
  CHECK(kv.stats().host_transfers == 0);
  CHECK(transfers_touching(kv, kv.host_device()) == 0);
  CHECK(kv.count(KVTier::Peer) == 8);
}

TEST_CASE("zero peer capacity sends every eviction to host") {
  KVCacheSim kv(model(), topo(0, 16), full_budget());
  for (int s = 0; s < 6; ++s) kv.append_kv(s, 16);
  kv.evict(6 * kv.block_bytes());
  kv.sim().run();
  CHECK(kv.stats().evictions_to_peer == 0);
  CHECK(kv.stats().evictions_to_host == 6);
  for (const auto& r : kv.sim().log().records()) {
    if (r.kind != EventKind::TransferIssue) continue;
    CHECK(r.device == kComputeDevice);
    CHECK(r.peer == kv.host_device());
  }
  CHECK(transfers_touching(kv, kv.host_device()) == 6);
}

TEST_CASE("reload from peer costs one peer transfer") {
  KVCacheSim kv(model(), topo(1, 16), full_budget());
  kv.append_kv(0, 16);
  const auto id = kv.sequence_blocks(0)[0];
  kv.evict(kv.block_bytes());
  kv.sim().run();
  REQUIRE(kv.block(id).tier == KVTier::Peer);
  const std::size_t before = kv.sim().log().records().size();
  const SimTime start = kv.sim().now();
  SimTime finished = -1;
  std::uint64_t content = 0;
  kv.reload(id, [&](std::uint64_t c) {
    finished = kv.sim().now();
    content = c;
  });
  kv.sim().run();
  CHECK(finished - start == to_sim_time(transfer_time(kPeer, 16 * 1024)));
  CHECK(content == kv_content(0, 0, 16));
  std::size_t issues = 0;
  for (std::size_t i = before; i < kv.sim().log().records().size(); ++i) {
    const auto& r = kv.sim().log().records()[i];
    if (r.kind != EventKind::TransferIssue) continue;
    ++issues;
    CHECK(r.device == 1);
    CHECK(r.peer == kComputeDevice);
  }
  CHECK(issues == 1);
  CHECK(kv.block(id).tier == KVTier::Local);
  CHECK(kv.runtime().live_handles() == 0);
}

TEST_CASE("reload from host costs one host transfer") {
  KVCacheSim kv(model(), topo(0, 16), full_budget());
  kv.append_kv(0, 16);
  const auto id = kv.sequence_blocks(0)[0];
  kv.evict(kv.block_bytes());
  kv.sim().run();
  REQUIRE(kv.block(id).tier == KVTier::Host);
  const SimTime start = kv.sim().now();
  SimTime finished = -1;
  std::uint64_t content = 0;
  kv.reload(id, [&](std::uint64_t c) {
    finished = kv.sim().now();
    content = c;
  });
  kv.sim().run();
  CHECK(finished - start == to_sim_time(transfer_time(kHost, 16 * 1024)));
  CHECK(content == kv_content(0, 0, 16));
  CHECK(kv.stats().reloads_from_host == 1);
}

TEST_CASE("backed block revoked around a reload keeps its content") {
  const Bytes data = 16 * 1024;
  SUBCASE("revoked while the reload is in flight") {
    KVCacheSim kv(model(), topo(1, 16), full_budget());
    kv.append_kv(0, 16, Durability::Backed);
    const auto id = kv.sequence_blocks(0)[0];
    kv.evict(kv.block_bytes());
    kv.sim().run();
    REQUIRE(kv.block(id).tier == KVTier::Peer);
    REQUIRE(kv.block(id).host_copy.has_value());
    const auto handle = *kv.block(id).handle;
    const SimTime start = kv.sim().now();
    SimTime finished = -1;
    std::uint64_t content = 0;
    kv.reload(id, [&](std::uint64_t c) {
      finished = kv.sim().now();
      content = c;
    });
    kv.runtime().revoke(handle, RevokeReason::ExternalReclaim);
    kv.sim().run();
    CHECK(content == kv_content(0, 0, 16));
    const SimTime drain = to_sim_time(transfer_time(kPeer, data));
    CHECK(finished - start <= to_sim_time(transfer_time(kHost, data)) + drain);
    CHECK_FALSE(check_all(kv.sim().log()).has_value());
  }
  SUBCASE("revoked before the reload is issued") {
    KVCacheSim kv(model(), topo(1, 16), full_budget());
    kv.append_kv(0, 16, Durability::Backed);
    const auto id = kv.sequence_blocks(0)[0];
    kv.evict(kv.block_bytes());
    kv.sim().run();
    kv.runtime().revoke(*kv.block(id).handle, RevokeReason::ExternalReclaim);
    kv.sim().run();
    CHECK(kv.block(id).tier == KVTier::Host);
    std::uint64_t content = 0;
    const SimTime start = kv.sim().now();
    SimTime finished = -1;
    kv.reload(id, [&](std::uint64_t c) {
      content = c;
      finished = kv.sim().now();
    });
    kv.sim().run();
    CHECK(content == kv_content(0, 0, 16));
    CHECK(finished - start == to_sim_time(transfer_time(kHost, data)));
    CHECK(kv.stats().reloads_from_host == 1);
  }
}

TEST_CASE("lossy block without a host copy is recomputed") {
  // Host DRAM too small for a block: eviction drops it.
  KVCacheSim kv(model(2e-6), topo(0, 16, GiB, KiB), full_budget());
  kv.append_kv(0, 16, Durability::Lossy);
  const auto id = kv.sequence_blocks(0)[0];
  kv.evict(kv.block_bytes());
  kv.sim().run();
  REQUIRE(kv.block(id).tier == KVTier::NotMaterialized);
  const SimTime start = kv.sim().now();
  std::uint64_t content = 0;
  kv.reload(id, [&](std::uint64_t c) { content = c; });
  kv.sim().run();
  CHECK(content == kv_content(0, 0, 16));
  CHECK(kv.sim().now() - start == to_sim_time(16 * 2e-6));
  CHECK(count_kind(kv, EventKind::Reconstruct) == 1);
}

TEST_CASE("resolve_fallback") {
  KVBlock b;
  b.entries = 16;
  SUBCASE("free recomputation always wins") {
    const auto m = model(0.0);
    for (int e : {1, 16, 1000}) {
      b.entries = e;
      CHECK(resolve_fallback(b, true, m, kHost) == FallbackPlan::Recompute);
    }
  }
  SUBCASE("a very fast host link fetches") {
    CHECK(resolve_fallback(b, true, model(1e-6), LinkParams{0.0, 1e18}) ==
          FallbackPlan::FetchFromHost);
  }
  SUBCASE("no host copy always recomputes") {
    CHECK(resolve_fallback(b, false, model(1.0), LinkParams{0.0, 1e18}) == FallbackPlan::Recompute);
  }
  SUBCASE("the decision flips at the crossover") {
    // alpha + e * bpe / B = e * r  =>  e* = alpha / (r - bpe / B) = 10.
    KVModelSpec m;
    m.bytes_per_entry = 1000;
    m.recompute_time_per_entry = 2e-6;
    const LinkParams host{10e-6, 1e9};
    const double crossover = host.fixed_cost / (m.recompute_time_per_entry - 1000 / host.bandwidth);
    CHECK(crossover == doctest::Approx(10.0));
    b.entries = 9;
    CHECK(resolve_fallback(b, true, m, host) == FallbackPlan::Recompute);
    b.entries = 11;
    CHECK(resolve_fallback(b, true, m, host) == FallbackPlan::FetchFromHost);
    b.entries = 1000;
    CHECK(resolve_fallback(b, true, m, host) == FallbackPlan::FetchFromHost);
  }
}

TEST_CASE("reload latency experiment") {
  const auto& p = calibration_profile("paper-h100");
  const KVModelSpec models[] = {kv_profile("kimi-k2"), kv_profile("mistral-large-3")};
  const int zero[] = {0};
  const auto rows0 = reload_latency_experiment(models, zero, p.kv_links.peer, p.kv_links.host);
  CHECK(rows0[0].speedup == doctest::Approx(p.kv_links.host.fixed_cost / p.kv_links.peer.fixed_cost));

  const auto rows = reload_latency_experiment(models, kDefaultReloadEntries, p.kv_links.peer,
                                              p.kv_links.host);
  REQUIRE(rows.size() == 12);
  for (std::size_t i = 1; i < 6; ++i) {
    CHECK(rows[i].speedup > rows[i - 1].speedup);
    CHECK(rows[6 + i].speedup > rows[6 + i - 1].speedup);
  }
  for (const auto& r : rows) {
    const Bytes bytes = static_cast<Bytes>(r.entries) * kv_profile(r.model).bytes_per_entry;
    CHECK(r.host_s == transfer_time(p.kv_links.host, bytes));
    CHECK(r.peer_s == transfer_time(p.kv_links.peer, bytes));
  }
  const int negative[] = {-1};
  CHECK_THROWS_AS(reload_latency_experiment(models, negative, p.kv_links.peer, p.kv_links.host),
                  InvalidSpec);
}

TEST_CASE("workload content is independent of the peer tier") {
  for (Durability d : {Durability::Lossy, Durability::Backed}) {
    KVWorkload w;
    w.sequences = 3;
    w.prompt_tokens = 40;
    w.decode_steps = 10;
    w.durability = d;
    KVCacheSim base(model(1e-6), topo(0, 12), full_budget());
    const auto expected = run_kv_workload(base, w);

    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      KVCacheSim kv(model(1e-6), topo(1, 12), full_budget());
      std::mt19937_64 rng(seed);
      kv.runtime().set_alloc_observer([&](const HarvestHandle& h) {
        kv.sim().schedule_after(static_cast<SimTime>(rng() % 200'000), [&kv, h] {
          kv.runtime().revoke(h, RevokeReason::Pressure);
        });
      });
      const auto got = run_kv_workload(kv, w);
      CAPTURE(seed);
      CHECK(got.digest == expected.digest);
      CHECK(kv.check_invariants().empty());
      CHECK_FALSE(check_all(kv.sim().log()).has_value());
    }
  }
}

TEST_CASE("a pinned working set larger than the budget is reported") {
  KVCacheSim kv(model(), topo(1, 2), full_budget());
  kv.append_kv(0, 32);
  kv.access_sequence(0, {});
  CHECK_THROWS_AS(kv.append_kv(0, 1), TierExhausted);
}

TEST_CASE("block table dump") {
  KVCacheSim kv(model(), topo(1, 4), full_budget());
  kv.append_kv(3, 20);
  std::ostringstream out;
  kv.dump(out);
  CHECK(out.str().find("seq=3 idx=1 entries=4 tier=local") != std::string::npos);
}
