// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "harvest/interconnect.hpp"
#include "harvest/profiles.hpp"
#include "oracles.hpp"

using namespace harvest;

namespace {

struct Fixture {
  std::vector<CalibrationPoint> points;
  double fixed_cost = 0;
  double bandwidth = 0;
};

Fixture load_fixture(const std::string& name) {
  const std::string path = std::string(HARVEST_DATA_DIR) + "/calibration/" + name;
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::smatch m;
  const std::regex truth(R"(fixed_cost=([0-9.eE+-]+) bandwidth=([0-9.eE+-]+))");
  bool found = false;
  while (!found && std::getline(in, line)) found = std::regex_search(line, m, truth);
  REQUIRE(found);
  Fixture f;
  f.fixed_cost = std::stod(m[1]);
  f.bandwidth = std::stod(m[2]);
  in.clear();
  in.seekg(0);
  f.points = parse_calibration_points(in);
  return f;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

TopologyConfig two_peer_config() {
  TopologyConfig cfg;
  cfg.local_capacity = 80 * GiB;
  cfg.peers = {{1, Tier::PeerHBM, 8 * GiB, 0, 0}, {2, Tier::PeerHBM, 8 * GiB, 0, 0}};
  cfg.peer_link = {10e-6, 100e9};
  cfg.host_link = {20e-6, 25e9};
  return cfg;
}

}  // namespace

TEST_CASE("transfer_time is affine") {
  LinkParams link{10e-6, 100e9};
  CHECK(transfer_time(link, 0) == 10e-6);
  CHECK(transfer_time(link, 1'000'000'000) == doctest::Approx(10e-6 + 10e-3).epsilon(1e-12));

  const auto& p = calibration_profile("paper-h100");
  const Bytes big = Bytes{1} << 40;
  const double ratio =
      transfer_time(p.expert_links.host, big) / transfer_time(p.expert_links.peer, big);
  CHECK(ratio == doctest::Approx(p.expert_links.peer.bandwidth / p.expert_links.host.bandwidth)
                     .epsilon(1e-3));
}

TEST_CASE("link validation") {
  LinkSpec l;
  l.a = 0;
  l.b = 1;
  l.bandwidth = 0;
  CHECK_THROWS_AS(l.validate(), InvalidSpec);
  l.bandwidth = 1;
  l.fixed_cost = -1;
  CHECK_THROWS_AS(l.validate(), InvalidSpec);
  l.fixed_cost = 0;
  l.b = 0;
  CHECK_THROWS_AS(l.validate(), InvalidSpec);
}

TEST_CASE("calibrate recovers an exact line") {
  std::vector<CalibrationPoint> pts;
  for (int i = 0; i < 12; ++i) {
    const double size = std::ldexp(1.0, 12 + i);
    pts.push_back({size, 5e-6 + size / 50e9});
  }
  const auto fit = calibrate(pts);
  CHECK(rel(fit.fixed_cost, 5e-6) < 1e-9);
  CHECK(rel(fit.bandwidth, 50e9) < 1e-9);
  CHECK(fit.rms_relative_error < 1e-9);
}

TEST_CASE("calibrate interpolates two points exactly") {
  std::vector<CalibrationPoint> pts = {{1e6, 3e-5}, {9e6, 1.1e-4}};
  const auto fit = calibrate(pts);
  CHECK(fit.fixed_cost + 1e6 / fit.bandwidth == doctest::Approx(3e-5).epsilon(1e-12));
  CHECK(fit.fixed_cost + 9e6 / fit.bandwidth == doctest::Approx(1.1e-4).epsilon(1e-12));
  CHECK(fit.rms_relative_error < 1e-12);
}

TEST_CASE("calibrate rejects degenerate input") {
  std::vector<CalibrationPoint> same = {{1e6, 1e-5}, {1e6, 2e-5}};
  CHECK_THROWS_AS(calibrate(same), CalibrationError);
  std::vector<CalibrationPoint> one = {{1e6, 1e-5}};
  CHECK_THROWS_AS(calibrate(one), CalibrationError);
  std::vector<CalibrationPoint> falling = {{1e6, 2e-5}, {2e6, 1e-5}};
  CHECK_THROWS_AS(calibrate(falling), CalibrationError);
}

TEST_CASE("calibration fixtures") {
  for (const char* name : {"exact_peer.csv", "exact_host.csv", "two_point.csv"}) {
    CAPTURE(name);
    const auto f = load_fixture(name);
    const auto fit = calibrate(f.points);
    CHECK(rel(fit.fixed_cost, f.fixed_cost) < 1e-9);
    CHECK(rel(fit.bandwidth, f.bandwidth) < 1e-9);
  }
  const auto noisy = load_fixture("noisy_1pct.csv");
  const auto fit = calibrate(noisy.points);
  CHECK(rel(fit.fixed_cost, noisy.fixed_cost) < 0.05);
  CHECK(rel(fit.bandwidth, noisy.bandwidth) < 0.05);

  std::vector<double> x, y;
  for (const auto& p : noisy.points) {
    x.push_back(p.size);
    y.push_back(p.latency);
  }
  CHECK(fit.rms_relative_error ==
        doctest::Approx(oracle::rms_relative(fit.fixed_cost, fit.bandwidth, x, y)).epsilon(1e-9));
}

TEST_CASE("calibrate matches an independent weighted least-squares solve") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.02);
  std::vector<CalibrationPoint> pts;
  std::vector<double> x, y, w;
  for (int i = 0; i < 20; ++i) {
    const double size = std::ldexp(1.0, 10 + i);
    const double lat = (8e-6 + size / 30e9) * (1.0 + noise(rng));
    pts.push_back({size, lat});
    x.push_back(size);
    y.push_back(lat);
    w.push_back(1.0 / (lat * lat));
  }
  const auto ref = oracle::weighted_line(x, y, w);
  REQUIRE(ref.a > 0);
  const auto fit = calibrate(pts);
  CHECK(rel(fit.fixed_cost, static_cast<double>(ref.a)) < 1e-6);
  CHECK(rel(fit.bandwidth, static_cast<double>(1.0L / ref.b)) < 1e-6);
}

TEST_CASE("parse_calibration_points") {
  std::istringstream ok("# comment\n\n1024, 1e-5\n2048,2e-5 # trailing\n");
  const auto pts = parse_calibration_points(ok);
  REQUIRE(pts.size() == 2);
  CHECK(pts[1].size == 2048);
  std::istringstream bad("1024,1e-5\nabc,1\n");
  try {
    parse_calibration_points(bad);
    FAIL("expected CalibrationError");
  } catch (const CalibrationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("schedule_transfer on an idle link") {
  Simulation sim;
  Interconnect net(sim, make_topology(two_peer_config()));
  const Bytes size = 4 * MiB;
  const SimTime expect = to_sim_time(transfer_time(LinkParams{10e-6, 100e9}, size));
  SimTime completed = -1;
  auto st = net.schedule_transfer({0, {0, size}, 1, {0, size}, size, 0, 0},
                                  [&](const ScheduledTransfer&) { completed = sim.now(); });
  CHECK(st.completion == expect);
  CHECK(net.inflight_count() == 1);
  CHECK(net.last_inflight_completion(1, {0, 1}) == expect);
  CHECK_FALSE(net.last_inflight_completion(1, {size, 1}).has_value());
  sim.run();
  CHECK(completed == expect);
  CHECK(net.inflight_count() == 0);
}

TEST_CASE("same-link transfers serialize in FIFO order") {
  Simulation sim;
  Interconnect net(sim, make_topology(two_peer_config()));
  const Bytes size = 4 * MiB;
  const SimTime one = to_sim_time(transfer_time(LinkParams{10e-6, 100e9}, size));
  auto a = net.schedule_transfer({0, {0, size}, 1, {0, size}, size, 0, 0}, {});
  auto b = net.schedule_transfer({1, {0, size}, 0, {0, size}, size, 0, 0}, {});
  CHECK(a.completion == one);
  CHECK(b.start == one);
  CHECK(b.completion == 2 * one);
  sim.run();
}

TEST_CASE("distinct links are independent") {
  Simulation sim;
  Interconnect net(sim, make_topology(two_peer_config()));
  const Bytes size = 4 * MiB;
  auto a = net.schedule_transfer({0, {0, size}, 1, {0, size}, size, 0, 0}, {});
  auto b = net.schedule_transfer({0, {0, size}, 2, {0, size}, size, 0, 0}, {});
  auto c = net.schedule_transfer({3, {0, size}, 0, {0, size}, size, 0, 0}, {});
  const SimTime peer = to_sim_time(transfer_time(LinkParams{10e-6, 100e9}, size));
  const SimTime host = to_sim_time(transfer_time(LinkParams{20e-6, 25e9}, size));
  CHECK(a.completion == peer);
  CHECK(b.completion == peer);
  CHECK(c.completion == host);
  sim.run();
}

TEST_CASE("routing") {
  Simulation sim;
  auto topo = make_topology(two_peer_config());
  {
    Interconnect net(sim, topo);
    CHECK_THROWS_AS(net.schedule_transfer({1, {0, 8}, 2, {0, 8}, 8, 0, 0}, {}), RoutingError);
  }
  topo.allow_staging = true;
  Interconnect staged(sim, topo);
  const double expect = transfer_time(LinkParams{20e-6, 25e9}, 8) * 2;
  CHECK(staged.route_time(1, 2, 8) == doctest::Approx(expect));
  auto t = staged.schedule_transfer({1, {0, 8}, 2, {0, 8}, 8, 0, 0}, {});
  CHECK(t.completion == 2 * to_sim_time(transfer_time(LinkParams{20e-6, 25e9}, 8)));
  sim.run();
}

TEST_CASE("topology validation") {
  auto cfg = two_peer_config();
  auto topo = make_topology(cfg);
  CHECK(topo.hops(0, 1) == 1);
  CHECK_FALSE(topo.hops(1, 2).has_value());
  CHECK(topo.devices_with_tier(Tier::PeerHBM).size() == 2);

  std::vector<DeviceSpec> devices = {{0, Tier::LocalHBM, GiB, 0, 0}, {1, Tier::PeerHBM, GiB, 0, 0}};
  Topology unlinked(devices, {});
  CHECK_THROWS_AS(unlinked.validate(), InvalidSpec);
  Topology dup(devices, {{LinkKind::PeerLink, 0, 1, 0, 1, 1}, {LinkKind::PeerLink, 0, 1, 1, 0, 1}});
  CHECK_THROWS_AS(dup.validate(), InvalidSpec);
}
