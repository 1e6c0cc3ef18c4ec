// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "harvest/log_checks.hpp"
#include "harvest/profiles.hpp"
#include "harvest/report.hpp"
#include "harvest/scenario.hpp"

using namespace harvest;
namespace fs = std::filesystem;

namespace {

const fs::path kData = HARVEST_DATA_DIR;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("harvest_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Scenario parse(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario(in, kData);
}

}  // namespace

TEST_CASE("scenario parsing") {
  const auto s = parse(
      "[run]\nname = t\nworkload = mixed\nseeds = 3, 4\n"
      "[topology]\npeers = 2\npeer_capacity_gib = 8\npolicy = locality\n"
      "[moe]\nmodels = phi-tiny-moe\nfractions = 0, 100\ntiers = peer\nskew = 0.5\n"
      "[kv]\nmodels = kimi-k2\nentries = 100\ndurability = backed\n"
      "[availability]\nsource = markov\nlevels_pct = 100, 0\nmean_sojourn_s = 0.1, 0.1\n");
  CHECK(s.name == "t");
  CHECK(s.workload == WorkloadKind::Mixed);
  CHECK(s.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(s.peers == 2);
  CHECK(s.peer_capacity == 8 * GiB);
  CHECK(s.policy.kind == PolicyKind::Locality);
  CHECK(s.moe.models == std::vector<std::string>{"phi-tiny-moe"});
  CHECK(s.moe.tiers == std::vector<Tier>{Tier::PeerHBM});
  CHECK(s.moe.routing.skew == 0.5);
  CHECK(s.kv.workload.durability == Durability::Backed);
  CHECK(s.availability.source == AvailabilitySource::Markov);
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("invalid scenarios name the offending field") {
  int checked = 0;
  for (const auto& entry : fs::directory_iterator(kData / "scenarios" / "invalid")) {
    std::ifstream in(entry.path());
    std::string first;
    std::getline(in, first);
    const std::string tag = "; expect: ";
    REQUIRE(first.rfind(tag, 0) == 0);
    const std::string expect = first.substr(tag.size());
    CAPTURE(entry.path().filename().string());
    try {
      load_scenario(entry.path()).validate();
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(expect) != std::string::npos);
    }
    ++checked;
  }
  CHECK(checked >= 20);
}

TEST_CASE("unknown profile message names the profile") {
  try {
    parse("[run]\nworkload = moe\nseeds = 1\nprofile = nope-x1\n[moe]\nmodels = qwen2-moe\n").validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("nope-x1") != std::string::npos);
  }
}

TEST_CASE("minimal scenario writes one sweep table and a summary") {
  const auto out = scratch("minimal");
  const auto files = run_scenario(load_scenario(kData / "scenarios" / "minimal_moe.ini"), out);
  CHECK(fs::exists(out / "moe_sweep_qwen2-moe_seed1.csv"));
  CHECK(fs::exists(out / "summary.csv"));
  CHECK(slurp(out / "moe_sweep_qwen2-moe_seed1.csv").rfind("fraction_pct,tier,tokens_per_s,stall_s\n", 0) ==
        0);
  CHECK(slurp(out / "summary.csv").rfind("experiment,key,metric,mean,min,max,seeds\n", 0) == 0);
  for (const auto& f : files) CHECK(fs::exists(f));
  for (const auto& e : fs::directory_iterator(out)) CHECK(e.path().extension() != ".tmp");
}

TEST_CASE("scenario runs are byte-identical") {
  for (const char* name : {"minimal_moe.ini", "churn_mixed.ini"}) {
    CAPTURE(name);
    const auto s = load_scenario(kData / "scenarios" / name);
    const auto a = scratch("det_a");
    const auto b = scratch("det_b");
    const auto fa = run_scenario(s, a);
    const auto fb = run_scenario(s, b);
    REQUIRE(fa.size() == fb.size());
    for (std::size_t i = 0; i < fa.size(); ++i) {
      CHECK(fa[i].filename() == fb[i].filename());
      CHECK(slurp(fa[i]) == slurp(fb[i]));
    }
  }
}

TEST_CASE("churn runs match the zero-peer baseline") {
  const auto out = scratch("churn");
  run_scenario(load_scenario(kData / "scenarios" / "churn_mixed.ini"), out);
  std::ifstream in(out / "churn_seed1.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "workload,model,elapsed_s,revoked_handles,revoked_bytes,fallbacks,digest_match");
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CHECK(line.substr(line.rfind(',') + 1) == "1");
    ++rows;
  }
  CHECK(rows == 2);
}

TEST_CASE("a corrupted event log raises InvariantViolation") {
  auto s = load_scenario(kData / "scenarios" / "churn_mixed.ini");
  s.inject_log_fault = true;
  s.seeds = {1};
  try {
    run_scenario(s, scratch("fault"));
    FAIL("expected InvariantViolation");
  } catch (const InvariantViolation& e) {
    CHECK_FALSE(e.excerpt().empty());
  }
}

TEST_CASE("report") {
  SUBCASE("two-model run gives a section per model") {
    const auto out = scratch("report2");
    auto s = parse("[run]\nworkload = moe\nseeds = 1, 2\n[moe]\nmodels = phi-tiny-moe, mixtral-8x7b\n"
                   "fractions = 0, 50\n");
    run_scenario(s, out);
    std::ostringstream text, warn;
    const int sections = write_report(out, text, warn);
    CHECK(text.str().find("MoE offload sweep: phi-tiny-moe (2 seeds)") != std::string::npos);
    CHECK(text.str().find("MoE offload sweep: mixtral-8x7b (2 seeds)") != std::string::npos);
    CHECK(sections == 3);
    CHECK(warn.str().empty());
  }
  SUBCASE("empty directory") {
    std::ostringstream text, warn;
    CHECK(write_report(scratch("report_empty"), text, warn) == 0);
    CHECK(text.str().find("no metrics found") != std::string::npos);
  }
  SUBCASE("corrupt table is skipped with a warning") {
    const auto out = scratch("report_corrupt");
    run_scenario(load_scenario(kData / "scenarios" / "minimal_moe.ini"), out);
    std::ofstream(out / "moe_speedup_seed1.csv") << "model,oops\nqwen2-moe,abc\n";
    std::ostringstream text, warn;
    const int sections = write_report(out, text, warn);
    CHECK(sections == 1);
    CHECK(warn.str().find("moe_speedup_seed1.csv") != std::string::npos);
    CHECK(text.str().find("MoE offload sweep: qwen2-moe") != std::string::npos);
  }
}

TEST_CASE("format_double is shortest round trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(std::stod(format_double(1.0 / 3)) == 1.0 / 3);
}

TEST_CASE("profiles") {
  CHECK(calibration_profile_names() == std::vector<std::string>{"paper-h100"});
  CHECK_THROWS_AS(calibration_profile("x"), ConfigError);
  CHECK(moe_profile_names().size() == 4);
  CHECK(kv_profile_names().size() == 3);
  const auto& p = calibration_profile("paper-h100");
  const auto topo = p.expert_topology(2);
  CHECK(topo.peers.size() == 2);
  CHECK(topo.peer_link.bandwidth == p.expert_links.peer.bandwidth);
  CHECK(p.kv_topology().host_link.fixed_cost == p.kv_links.host.fixed_cost);
}
