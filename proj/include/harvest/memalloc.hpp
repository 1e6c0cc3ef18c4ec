// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "harvest/types.hpp"

namespace harvest {

struct DeviceSpec {
  DeviceId device_id = 0;
  Tier tier = Tier::PeerHBM;
  Bytes capacity = 0;
  // Withheld from harvesting; models the MIG cache-instance boundary.
  Bytes reserved = 0;
  // Safety margin that is never handed out.
  Bytes headroom = 0;

  /// Bytes managed by the allocator: capacity - reserved - headroom.
  Bytes usable() const { return capacity - reserved - headroom; }
  void validate() const;
};

struct Segment {
  Bytes base = 0;
  Bytes size = 0;

  Bytes end() const { return base + size; }
  bool overlaps(const Segment& other) const {
    return base < other.end() && other.base < end();
  }
  friend bool operator==(const Segment&, const Segment&) = default;
  friend auto operator<=>(const Segment&, const Segment&) = default;
};

class DoubleFree : public HarvestError {
 public:
  using HarvestError::HarvestError;
};

/// Segment-granularity accounting for one modeled device.
///
/// The free list is kept sorted by base and eagerly coalesced, so any state
/// reached by alloc/free sequences has a single canonical representation.
/// Best fit picks the free segment with the smallest leftover; ties go to the
/// lowest base. A secondary (size, base) index makes that a single lookup.
class DeviceState {
 public:
  explicit DeviceState(DeviceSpec spec);

  const DeviceSpec& spec() const { return spec_; }
  DeviceId id() const { return spec_.device_id; }

  /// Free segment best fit would choose for `size`, without allocating.
  std::optional<Segment> find_best_fit(Bytes size) const;

  /// Allocates `size` bytes from the best-fitting free segment. Returns the
  /// allocated segment, or nullopt (NoCapacity) when nothing fits.
  std::optional<Segment> alloc_best_fit(Bytes size);

  /// Allocates `size` bytes from the start of the free segment at `free_base`.
  Segment allocate_from(Bytes free_base, Bytes size);

  /// Returns an allocated segment to the free list. Throws DoubleFree if the
  /// exact segment is not currently allocated.
  void free_segment(const Segment& segment);

  /// Returns the tail of an allocated segment to the free list, keeping the
  /// first `new_size` bytes allocated. Throws DoubleFree for unknown segments.
  Segment shrink_allocation(const Segment& segment, Bytes new_size);

  bool is_allocated(const Segment& segment) const;

  /// Sum of free segments.
  Bytes harvestable_capacity() const { return free_total_; }
  Bytes allocated_total() const { return allocated_total_; }
  Bytes largest_free() const;
  /// 1 - largest_free / free_total; 0 for an empty or unfragmented free list.
  double fragmentation() const;

  std::vector<Segment> free_list() const;
  std::vector<Segment> allocated_segments() const;

  /// Verifies non-overlap, exact accounting and coalescing. Returns an empty
  /// string when all invariants hold, otherwise a description.
  std::string check_invariants() const;

 private:
  void insert_free(Bytes base, Bytes size);
  void erase_free(std::map<Bytes, Bytes>::iterator it);

  DeviceSpec spec_;
  std::map<Bytes, Bytes> free_;            // base -> size
  std::set<std::pair<Bytes, Bytes>> by_size_;  // (size, base)
  std::map<Bytes, Bytes> allocated_;       // base -> size
  Bytes free_total_ = 0;
  Bytes allocated_total_ = 0;
};

/// Builds a device state whose free list is exactly `free_segments`, by
/// allocating the gaps. Used by tests and tools to reproduce layouts.
DeviceState make_state_with_free_list(const DeviceSpec& spec,
                                      const std::vector<Segment>& free_segments);

}  // namespace harvest
