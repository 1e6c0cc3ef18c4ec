// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>

#include "harvest/memalloc.hpp"
#include "oracles.hpp"

using namespace harvest;

namespace {

DeviceSpec spec(Bytes capacity, Bytes reserved = 0, Bytes headroom = 0) {
  DeviceSpec s;
  s.device_id = 1;
  s.capacity = capacity;
  s.reserved = reserved;
  s.headroom = headroom;
  return s;
}

}  // namespace

TEST_CASE("init_device carves usable bytes") {
  DeviceState a(spec(100, 20));
  CHECK(a.free_list() == std::vector<Segment>{{0, 80}});
  CHECK(a.harvestable_capacity() == 80);

  DeviceState b(spec(80 * GiB, 0, GiB));
  CHECK(b.harvestable_capacity() == 79 * GiB);

  CHECK_THROWS_AS(DeviceState(spec(10, 8, 4)), InvalidSpec);
  CHECK_THROWS_AS(DeviceState(spec(0)), InvalidSpec);
}

TEST_CASE("alloc_best_fit picks the smallest leftover") {
  SUBCASE("exact fit") {
    auto st = make_state_with_free_list(spec(1000), {{0, 100}, {200, 40}});
    CHECK(st.alloc_best_fit(40) == Segment{200, 40});
    CHECK(st.free_list() == std::vector<Segment>{{0, 100}});
  }
  SUBCASE("remainder stays free") {
    auto st = make_state_with_free_list(spec(1000), {{0, 100}, {200, 64}, {300, 65}});
    CHECK(st.alloc_best_fit(60) == Segment{200, 60});
    const auto fl = st.free_list();
    CHECK(std::find(fl.begin(), fl.end(), Segment{260, 4}) != fl.end());
  }
  SUBCASE("nothing fits") {
    auto st = make_state_with_free_list(spec(1000), {{0, 30}});
    CHECK_FALSE(st.alloc_best_fit(31).has_value());
    CHECK(st.harvestable_capacity() == 30);
  }
  SUBCASE("ties go to the lowest base") {
    auto st = make_state_with_free_list(spec(1000), {{500, 50}, {100, 50}});
    CHECK(st.alloc_best_fit(50) == Segment{100, 50});
  }
}

TEST_CASE("free_segment round trips and coalesces") {
  DeviceState st(spec(100));
  const auto initial = st.free_list();
  auto a = st.alloc_best_fit(10);
  REQUIRE(a);
  CHECK(*a == Segment{0, 10});
  st.free_segment(*a);
  CHECK(st.free_list() == initial);

  auto x = st.alloc_best_fit(10);
  auto y = st.alloc_best_fit(10);
  auto z = st.alloc_best_fit(80);
  REQUIRE((x && y && z));
  st.free_segment(*x);
  st.free_segment(*y);
  CHECK(st.free_list() == std::vector<Segment>{{0, 20}});

  CHECK_THROWS_AS(st.free_segment({5, 3}), DoubleFree);
  CHECK_THROWS_AS(st.free_segment(*x), DoubleFree);
  CHECK(st.check_invariants().empty());
}

TEST_CASE("harvestable_capacity tracks allocations") {
  DeviceState st(spec(100, 20));
  CHECK(st.harvestable_capacity() == 80);
  auto a = st.alloc_best_fit(30);
  REQUIRE(a);
  CHECK(st.harvestable_capacity() == 50);
  st.free_segment(*a);
  CHECK(st.harvestable_capacity() == 80);
}

TEST_CASE("shrink_allocation returns the tail") {
  DeviceState st(spec(100));
  auto a = st.alloc_best_fit(60);
  REQUIRE(a);
  const Segment kept = st.shrink_allocation(*a, 20);
  CHECK(kept == Segment{0, 20});
  CHECK(st.harvestable_capacity() == 80);
  CHECK(st.free_list() == std::vector<Segment>{{20, 80}});
  CHECK_THROWS_AS(st.shrink_allocation({1, 2}, 1), DoubleFree);
}

TEST_CASE("fragmentation metric") {
  DeviceState empty(spec(100));
  CHECK(empty.fragmentation() == 0.0);
  auto st = make_state_with_free_list(spec(1000), {{0, 30}, {100, 10}});
  CHECK(st.largest_free() == 30);
  CHECK(st.fragmentation() == doctest::Approx(1.0 - 30.0 / 40.0));
}

TEST_CASE("best fit matches the exhaustive oracle on random instances") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    const Bytes usable = std::uniform_int_distribution<Bytes>(16, 5000)(rng);
    const auto holes = oracle::random_free_list(rng, usable, 12);
    auto st = make_state_with_free_list(spec(usable), holes);
    REQUIRE(st.free_list() == holes);
    const Bytes size = std::uniform_int_distribution<Bytes>(1, usable / 3 + 1)(rng);
    const auto expected = oracle::best_fit(holes, size);
    const auto got = st.alloc_best_fit(size);
    REQUIRE(got.has_value() == expected.has_value());
    if (got) CHECK(got->base == expected->base);
    CHECK(st.check_invariants().empty());
  }
}

TEST_CASE("random alloc/free sequences keep accounting exact") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    DeviceState st(spec(4096, 128, 64));
    std::vector<Segment> live;
    for (int op = 0; op < 400; ++op) {
      if (live.empty() || rng() % 3 != 0) {
        const Bytes size = 1 + rng() % 300;
        if (auto seg = st.alloc_best_fit(size)) live.push_back(*seg);
      } else {
        const std::size_t k = rng() % live.size();
        st.free_segment(live[k]);
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
      }
      Bytes used = 0;
      for (const auto& s : live) used += s.size;
      REQUIRE(st.allocated_total() == used);
      REQUIRE(st.harvestable_capacity() + used == st.spec().usable());
      REQUIRE(st.check_invariants().empty());
    }
    for (const auto& s : live) st.free_segment(s);
    CHECK(st.free_list() == std::vector<Segment>{{0, st.spec().usable()}});
  }
}
