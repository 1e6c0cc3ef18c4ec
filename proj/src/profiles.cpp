// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/profiles.hpp"

#include <array>

namespace harvest {

namespace {

// Dual-H100 NVL host with NVLink between the GPUs and PCIe 5.0 to the host.
//
// Expert links: 9.6x bandwidth ratio with a small fixed cost, which gives a
// 7.5x peer speedup for a 12 MB expert and 9.5x for a 354 MB expert.
// KV links: peer 300 GB/s vs host 52.5 GB/s (ratio 5.71) with 64 us / 130 us
// fixed costs, which spans 5.45x at 100 Kimi-K2 entries to 5.71x at 8000.
const std::array<CalibrationProfile, 1> kCalibrations = {{
    {"paper-h100",
     {{14.03e-6, 360e9}, {34.94e-6, 37.5e9}},
     {{64.45e-6, 300e9}, {129.77e-6, 52.5e9}},
     80 * GiB,
     94 * GiB,
     640 * GiB},
}};

// expert_size = (total - active params) / (layers * (experts - top_k)) at
// FP16: the always-active share (attention, embeddings, shared experts) is
// excluded and the remainder split evenly over the routed experts.
//
// compute_time_per_microbatch is fitted so that, at 50% offload under
// "paper-h100" and skew 1.2, the peer-vs-host throughput ratio is about
// 1.75 (mixtral), 2.1 (phi-3.5), 1.48 (phi-tiny) and 1.55 (qwen2).
const std::array<MoEModelSpec, 4> kMoEProfiles = {{
    {"mixtral-8x7b", 32, 8, 2, 354'166'667, 21.7e-3},
    {"phi-3.5-moe", 32, 16, 2, 241'964'286, 24.7e-3},
    {"phi-tiny-moe", 32, 16, 2, 12'053'571, 1.93e-3},
    {"qwen2-moe", 24, 64, 4, 16'111'111, 9.45e-3},
}};

// bytes_per_entry at FP16 over all 61 layers:
//   deepseek-v3      128 heads x (192 key + 128 value) dims, decompressed
//   kimi-k2           64 heads x (192 key + 128 value) dims, decompressed
//   mistral-large-3  576-dim compressed latent per layer
// recompute_time_per_entry is large enough that fetching always wins.
const std::array<KVModelSpec, 3> kKVProfiles = {{
    {"deepseek-v3", 61ULL * 128 * 320 * 2, 1e-3},
    {"kimi-k2", 61ULL * 64 * 320 * 2, 1e-3},
    {"mistral-large-3", 61ULL * 576 * 2, 1e-3},
}};

template <typename T, std::size_t N>
const T& find_named(const std::array<T, N>& items, std::string_view name, const char* what) {
  for (const auto& item : items) {
    if (item.name == name) return item;
  }
  std::string known;
  for (const auto& item : items) known += (known.empty() ? "" : ", ") + item.name;
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(name) + "' (known: " +
                    known + ")");
}

template <typename T, std::size_t N>
std::vector<std::string> names_of(const std::array<T, N>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) out.push_back(item.name);
  return out;
}

TopologyConfig topology_for(const CalibrationProfile& p, const LinkPair& links, int peers) {
  TopologyConfig cfg;
  cfg.local_capacity = p.local_capacity;
  cfg.host_capacity = p.host_capacity;
  cfg.peer_link = links.peer;
  cfg.host_link = links.host;
  for (int i = 0; i < peers; ++i) cfg.peers.push_back({0, Tier::PeerHBM, p.peer_capacity, 0, 0});
  return cfg;
}

}  // namespace

TopologyConfig CalibrationProfile::expert_topology(int peers) const {
  return topology_for(*this, expert_links, peers);
}

TopologyConfig CalibrationProfile::kv_topology(int peers) const {
  return topology_for(*this, kv_links, peers);
}

const CalibrationProfile& calibration_profile(std::string_view name) {
  return find_named(kCalibrations, name, "calibration profile");
}

std::vector<std::string> calibration_profile_names() { return names_of(kCalibrations); }

const MoEModelSpec& moe_profile(std::string_view name) {
  return find_named(kMoEProfiles, name, "moe model profile");
}

std::vector<std::string> moe_profile_names() { return names_of(kMoEProfiles); }

const KVModelSpec& kv_profile(std::string_view name) {
  return find_named(kKVProfiles, name, "kv model profile");
}

std::vector<std::string> kv_profile_names() { return names_of(kKVProfiles); }

}  // namespace harvest
