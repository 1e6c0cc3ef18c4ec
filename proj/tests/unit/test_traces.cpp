// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <memory>
#include <sstream>

#include "harvest/traces.hpp"

using namespace harvest;

namespace {

std::string data_path(const std::string& rel) { return std::string(HARVEST_DATA_DIR) + "/" + rel; }

std::vector<SnapshotRecord> load(const std::string& rel) {
  std::ifstream in(data_path(rel));
  REQUIRE(in.good());
  return parse_snapshots(in).records;
}

DeviceSpec peer(Bytes capacity, Bytes reserved = 0, Bytes headroom = 0) {
  return {1, Tier::PeerHBM, capacity, reserved, headroom};
}

}  // namespace

TEST_CASE("parse_snapshots") {
  SUBCASE("valid rows") {
    std::istringstream in(
        "machine_id,timestamp,used,capacity\nm1,0,10,100\nm1,1.5,20,100\nm2,0,0,50\n");
    const auto r = parse_snapshots(in);
    REQUIRE(r.records.size() == 3);
    CHECK(r.records[1].timestamp == 1.5);
    CHECK(r.records[2].machine_id == "m2");
  }
  SUBCASE("used above capacity names the line") {
    std::istringstream in("machine_id,timestamp,used,capacity\nm1,0,10,100\nm1,1,200,100\n");
    try {
      parse_snapshots(in);
      FAIL("expected TraceError");
    } catch (const TraceError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("header only") {
    std::istringstream in("machine_id,timestamp,used,capacity\n");
    CHECK(parse_snapshots(in).records.empty());
  }
  SUBCASE("missing header") {
    std::istringstream in("m1,0,10,100\n");
    CHECK_THROWS_AS(parse_snapshots(in), TraceError);
    std::istringstream empty("");
    CHECK_THROWS_AS(parse_snapshots(empty), TraceError);
  }
  SUBCASE("lenient mode counts rejects") {
    std::istringstream in(
        "machine_id,timestamp,used,capacity\nm1,0,10,100\nm1,x,1,2\nm1,1,5\nm1,2,1,0\nm2,3,1,2\n");
    const auto r = parse_snapshots(in, ParseMode::Lenient);
    CHECK(r.records.size() == 2);
    CHECK(r.rejected == 3);
    REQUIRE(r.errors.size() == 3);
    CHECK(r.errors[0].find("line 3") == 0);
  }
}

TEST_CASE("write_snapshots round trips") {
  std::vector<SnapshotRecord> recs = {{"a", 0.25, 3, 10}, {"b", 1e9, 0, 1}, {"a", 7, 10, 10}};
  std::ostringstream out;
  write_snapshots(out, recs);
  std::istringstream in(out.str());
  CHECK(parse_snapshots(in).records == recs);
}

TEST_CASE("aggregations") {
  std::vector<SnapshotRecord> recs = {{"a", 0, 2, 10}, {"a", 1, 6, 10}, {"b", 0, 5, 10}};
  CHECK(utilization_samples(recs, Aggregation::Mean) == std::vector<double>{0.4, 0.5});
  CHECK(utilization_samples(recs, Aggregation::Max) == std::vector<double>{0.6, 0.5});
  CHECK(utilization_samples(recs, Aggregation::PerSnapshot).size() == 3);
  CHECK(parse_aggregation("max") == Aggregation::Max);
  CHECK_THROWS_AS(parse_aggregation("median"), ConfigError);
}

TEST_CASE("compute_cdf") {
  SUBCASE("one machine at 50%") {
    std::vector<SnapshotRecord> recs = {{"m", 0, 50, 100}};
    const auto cdf = compute_cdf(recs, 100);
    REQUIRE(cdf.points.size() == 101);
    for (const auto& p : cdf.points) CHECK(p.cumulative == (p.utilization >= 0.5 ? 1.0 : 0.0));
  }
  SUBCASE("empty input and bad resolution") {
    std::vector<SnapshotRecord> none;
    CHECK_THROWS_AS(compute_cdf(none), TraceError);
    std::vector<SnapshotRecord> one = {{"m", 0, 50, 100}};
    CHECK_THROWS_AS(compute_cdf(one, 0), TraceError);
  }
  SUBCASE("CDF is non-decreasing and ends at 1") {
    const auto cdf = compute_cdf(load("traces/synthetic_population.csv"), 50);
    for (std::size_t i = 1; i < cdf.points.size(); ++i) {
      CHECK(cdf.points[i].cumulative >= cdf.points[i - 1].cumulative);
    }
    CHECK(cdf.points.back().cumulative == 1.0);
  }
}

TEST_CASE("hand fixture matches its precomputed CDF exactly") {
  const auto recs = load("traces/hand_20.csv");
  CHECK(recs.size() == 20);
  const auto cdf = compute_cdf(recs, 100);
  std::ifstream expected(data_path("traces/hand_20_expected.csv"));
  REQUIRE(expected.good());
  std::string line;
  std::getline(expected, line);
  CHECK(line == "utilization,cumulative_fraction");
  std::size_t i = 0;
  while (std::getline(expected, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    REQUIRE(i < cdf.points.size());
    CHECK(cdf.points[i].utilization == std::stod(line.substr(0, comma)));
    CHECK(cdf.points[i].cumulative == std::stod(line.substr(comma + 1)));
    ++i;
  }
  CHECK(i == cdf.points.size());
  // Ten machines, means 1/16, 1/16, 3/16, 3/16, 4/16, 8/16, 8/16, 13/16, 14/16, 1.
  CHECK(cdf.at(0.2) == 0.4);
  CHECK(cdf.at(0.5) == 0.7);
}

TEST_CASE("synthetic population hits its anchors") {
  const auto cdf = compute_cdf(load("traces/synthetic_population.csv"), 100);
  CHECK(std::abs(cdf.at(0.20) - 0.68) <= 0.02);
  CHECK(std::abs(cdf.at(0.50) - 0.87) <= 0.02);
}

TEST_CASE("availability_from_trace") {
  SUBCASE("constant 30% utilization leaves 56 GiB") {
    std::vector<SnapshotRecord> recs = {{"m", 0, 30, 100}, {"m", 10, 30, 100}};
    const auto tl = availability_from_trace(recs, "m", peer(80 * GiB));
    REQUIRE(tl.steps.size() == 1);
    CHECK(tl.at(0) == 56 * GiB);
    CHECK(tl.at(5'000'000'000) == 56 * GiB);
  }
  SUBCASE("full utilization leaves nothing") {
    std::vector<SnapshotRecord> recs = {{"m", 0, 100, 100}};
    CHECK(availability_from_trace(recs, "m", peer(80 * GiB)).at(0) == 0);
  }
  SUBCASE("reserved and headroom are withheld and the time axis scales") {
    std::vector<SnapshotRecord> recs = {{"m", 100, 0, 100}, {"m", 110, 50, 100}, {"x", 0, 0, 1}};
    const auto tl = availability_from_trace(recs, "m", peer(80 * GiB, 8 * GiB, 2 * GiB), 0.5);
    REQUIRE(tl.steps.size() == 2);
    CHECK(tl.steps[0].time == 0);
    CHECK(tl.steps[0].harvestable == 70 * GiB);
    CHECK(tl.steps[1].time == 5 * kNanosPerSecond);
    CHECK(tl.steps[1].harvestable == 30 * GiB);
    CHECK_THROWS_AS(availability_from_trace(recs, "nope", peer(GiB)), TraceError);
  }
  SUBCASE("a utilization step reclaims the shortfall") {
    std::vector<SnapshotRecord> recs = {{"m", 0, 20, 100}, {"m", 1, 90, 100}};
    const DeviceSpec dev = peer(10 * GiB);
    const auto tl = availability_from_trace(recs, "m", dev);
    REQUIRE(tl.steps.size() == 2);
    CHECK(tl.steps[0].harvestable == 8 * GiB);
    CHECK(tl.steps[1].harvestable == GiB);

    TopologyConfig cfg;
    cfg.peers = {dev};
    cfg.peer_link = {1e-6, 1e11};
    cfg.host_link = {1e-5, 1e10};
    Simulation sim;
    Interconnect net(sim, make_topology(cfg));
    HarvestRuntime rt(sim, net);
    AvailabilityDriver driver(rt, 1, tl);
    driver.start();
    sim.run_until(10);
    CHECK(rt.harvestable_capacity(1) == 8 * GiB);
    std::vector<HarvestHandle> handles;
    for (int i = 0; i < 8; ++i) {
      auto h = rt.harvest_alloc(GiB, {});
      REQUIRE(h);
      handles.push_back(*h);
    }
    sim.run();
    CHECK(driver.reclaims() == 2);
    CHECK(driver.revoked_handles() == 7);
    CHECK(driver.revoked_bytes() >= 7 * GiB);
    CHECK(rt.live_handles() == 1);
    CHECK(rt.external_claimed(1) == 9 * GiB);
  }
}

TEST_CASE("markov availability") {
  SUBCASE("one level is constant") {
    const Bytes levels[] = {5 * GiB};
    const double sojourn[] = {1.0};
    const auto tl = markov_availability(levels, sojourn, 100.0, 1);
    REQUIRE(tl.steps.size() == 1);
    CHECK(tl.at(99 * kNanosPerSecond) == 5 * GiB);
  }
  SUBCASE("two symmetric levels split time evenly") {
    const Bytes levels[] = {GiB, 2 * GiB};
    const double sojourn[] = {10.0, 10.0};
    const double horizon = 200000.0;
    const auto tl = markov_availability(levels, sojourn, horizon, 42);
    const auto occ = tl.occupancy(to_sim_time(horizon));
    REQUIRE(occ.size() == 2);
    CHECK(std::abs(occ[0].second - 0.5) <= 0.02);
    CHECK(std::abs(occ[1].second - 0.5) <= 0.02);
  }
  SUBCASE("stationary shares follow the sojourn means") {
    const Bytes levels[] = {0, GiB, 2 * GiB};
    const double sojourn[] = {1.0, 2.0, 3.0};
    const double horizon = 100000.0;
    const auto occ = markov_availability(levels, sojourn, horizon, 7).occupancy(to_sim_time(horizon));
    REQUIRE(occ.size() == 3);
    // Uniform jumps: the embedded chain is uniform, so shares follow the means.
    CHECK(std::abs(occ[0].second - 1.0 / 6) <= 0.02);
    CHECK(std::abs(occ[1].second - 2.0 / 6) <= 0.02);
    CHECK(std::abs(occ[2].second - 3.0 / 6) <= 0.02);
  }
  SUBCASE("seeded runs are identical") {
    const Bytes levels[] = {0, GiB, 3 * GiB};
    const double sojourn[] = {0.5, 1.0, 2.0};
    const auto a = markov_availability(levels, sojourn, 1000.0, 9);
    const auto b = markov_availability(levels, sojourn, 1000.0, 9);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
      CHECK(a.steps[i].time == b.steps[i].time);
      CHECK(a.steps[i].harvestable == b.steps[i].harvestable);
    }
  }
  SUBCASE("invalid parameters") {
    const Bytes levels[] = {0, GiB};
    const double one[] = {1.0};
    const double bad[] = {1.0, 0.0};
    CHECK_THROWS_AS(markov_availability(levels, one, 1.0, 1), InvalidSpec);
    CHECK_THROWS_AS(markov_availability(levels, bad, 1.0, 1), InvalidSpec);
    CHECK_THROWS_AS(markov_availability(std::span<const Bytes>{}, std::span<const double>{}, 1.0, 1),
                    InvalidSpec);
  }
}
