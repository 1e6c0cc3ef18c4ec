// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "harvest/interconnect.hpp"
#include "harvest/kv_sim.hpp"
#include "harvest/moe_sim.hpp"

namespace harvest {

struct LinkPair {
  LinkParams peer;
  LinkParams host;
};

/// Named hardware calibration. Expert-sized and KV-sized transfers were
/// fitted separately, so each carries its own link pair.
struct CalibrationProfile {
  std::string name;
  LinkPair expert_links;
  LinkPair kv_links;
  Bytes local_capacity = 0;
  Bytes peer_capacity = 0;
  Bytes host_capacity = 0;

  TopologyConfig expert_topology(int peers = 1) const;
  TopologyConfig kv_topology(int peers = 1) const;
};

/// Throws ConfigError naming the profile if it is unknown.
const CalibrationProfile& calibration_profile(std::string_view name);
std::vector<std::string> calibration_profile_names();

const MoEModelSpec& moe_profile(std::string_view name);
std::vector<std::string> moe_profile_names();

const KVModelSpec& kv_profile(std::string_view name);
std::vector<std::string> kv_profile_names();

}  // namespace harvest
