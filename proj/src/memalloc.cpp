// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/memalloc.hpp"

#include <algorithm>
#include <sstream>

namespace harvest {

void DeviceSpec::validate() const {
  if (capacity == 0) {
    throw InvalidSpec("device " + std::to_string(device_id) + ": capacity must be > 0");
  }
  if (reserved > capacity || headroom > capacity - reserved) {
    throw InvalidSpec("device " + std::to_string(device_id) +
                      ": reserved + headroom exceeds capacity");
  }
}

DeviceState::DeviceState(DeviceSpec spec) : spec_(spec) {
  spec_.validate();
  if (spec_.usable() > 0) insert_free(0, spec_.usable());
}

void DeviceState::insert_free(Bytes base, Bytes size) {
  free_.emplace(base, size);
  by_size_.emplace(size, base);
  free_total_ += size;
}

void DeviceState::erase_free(std::map<Bytes, Bytes>::iterator it) {
  by_size_.erase({it->second, it->first});
  free_total_ -= it->second;
  free_.erase(it);
}

std::optional<Segment> DeviceState::find_best_fit(Bytes size) const {
  if (size == 0) return std::nullopt;
  auto it = by_size_.lower_bound({size, 0});
  if (it == by_size_.end()) return std::nullopt;
  return Segment{it->second, it->first};
}

std::optional<Segment> DeviceState::alloc_best_fit(Bytes size) {
  auto hole = find_best_fit(size);
  if (!hole) return std::nullopt;
  return allocate_from(hole->base, size);
}

Segment DeviceState::allocate_from(Bytes free_base, Bytes size) {
  auto it = free_.find(free_base);
  if (it == free_.end() || it->second < size || size == 0) {
    throw HarvestError("allocate_from: no free segment of sufficient size at base " +
                       std::to_string(free_base));
  }
  const Bytes hole_size = it->second;
  erase_free(it);
  if (hole_size > size) insert_free(free_base + size, hole_size - size);
  allocated_.emplace(free_base, size);
  allocated_total_ += size;
  return Segment{free_base, size};
}

bool DeviceState::is_allocated(const Segment& segment) const {
  auto it = allocated_.find(segment.base);
  return it != allocated_.end() && it->second == segment.size;
}

void DeviceState::free_segment(const Segment& segment) {
  auto it = allocated_.find(segment.base);
  if (it == allocated_.end() || it->second != segment.size) {
    std::ostringstream msg;
    msg << "device " << spec_.device_id << ": segment {" << segment.base << ","
        << segment.size << "} is not allocated";
    throw DoubleFree(msg.str());
  }
  allocated_.erase(it);
  allocated_total_ -= segment.size;

  Bytes base = segment.base;
  Bytes size = segment.size;
  auto next = free_.lower_bound(base);
  if (next != free_.begin()) {
    auto prev = std::prev(next);
    if (prev->first + prev->second == base) {
      base = prev->first;
      size += prev->second;
      erase_free(prev);
    }
  }
  next = free_.lower_bound(segment.base);
  if (next != free_.end() && next->first == segment.end()) {
    size += next->second;
    erase_free(next);
  }
  insert_free(base, size);
}

Segment DeviceState::shrink_allocation(const Segment& segment, Bytes new_size) {
  if (new_size == 0 || new_size >= segment.size) {
    throw HarvestError("shrink_allocation: new size must be in (0, size)");
  }
  if (!is_allocated(segment)) {
    throw DoubleFree("shrink_allocation: segment {" + std::to_string(segment.base) + "," +
                     std::to_string(segment.size) + "} is not allocated");
  }
  // Split into two allocations, then free the tail so it coalesces normally.
  allocated_[segment.base] = new_size;
  const Segment tail{segment.base + new_size, segment.size - new_size};
  allocated_.emplace(tail.base, tail.size);
  free_segment(tail);
  return Segment{segment.base, new_size};
}

Bytes DeviceState::largest_free() const {
  return by_size_.empty() ? 0 : by_size_.rbegin()->first;
}

double DeviceState::fragmentation() const {
  if (free_total_ == 0) return 0.0;
  return 1.0 - static_cast<double>(largest_free()) / static_cast<double>(free_total_);
}

std::vector<Segment> DeviceState::free_list() const {
  std::vector<Segment> out;
  out.reserve(free_.size());
  for (const auto& [base, size] : free_) out.push_back({base, size});
  return out;
}

std::vector<Segment> DeviceState::allocated_segments() const {
  std::vector<Segment> out;
  out.reserve(allocated_.size());
  for (const auto& [base, size] : allocated_) out.push_back({base, size});
  return out;
}

std::string DeviceState::check_invariants() const {
  std::vector<std::pair<Segment, bool>> all;  // (segment, is_free)
  Bytes free_sum = 0, alloc_sum = 0;
  for (const auto& [base, size] : free_) {
    if (size == 0) return "zero-size free segment";
    all.push_back({{base, size}, true});
    free_sum += size;
  }
  for (const auto& [base, size] : allocated_) {
    if (size == 0) return "zero-size allocated segment";
    all.push_back({{base, size}, false});
    alloc_sum += size;
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].first.end() > spec_.usable()) return "segment beyond usable capacity";
    if (i == 0) continue;
    if (all[i - 1].first.end() > all[i].first.base) return "overlapping segments";
    if (all[i - 1].second && all[i].second &&
        all[i - 1].first.end() == all[i].first.base) {
      return "adjacent free segments not coalesced";
    }
  }
  if (free_sum != free_total_ || alloc_sum != allocated_total_) return "stale totals";
  if (free_sum + alloc_sum != spec_.usable()) return "accounting mismatch";
  if (by_size_.size() != free_.size()) return "size index out of sync";
  return {};
}

DeviceState make_state_with_free_list(const DeviceSpec& spec,
                                      const std::vector<Segment>& free_segments) {
  auto sorted = free_segments;
  std::sort(sorted.begin(), sorted.end());
  // Allocate everything, then release the requested holes. Gaps between
  // holes stay allocated as filler.
  DeviceState filled(spec);
  Bytes cursor = 0;
  std::vector<Segment> fillers;
  for (const auto& hole : sorted) {
    if (hole.base < cursor || hole.end() > spec.usable() || hole.size == 0) {
      throw InvalidSpec("make_state_with_free_list: holes overlap or exceed capacity");
    }
    if (hole.base > cursor) fillers.push_back({cursor, hole.base - cursor});
    fillers.push_back(hole);
    cursor = hole.end();
  }
  if (cursor < spec.usable()) fillers.push_back({cursor, spec.usable() - cursor});
  for (const auto& piece : fillers) filled.allocate_from(piece.base, piece.size);
  for (const auto& hole : sorted) filled.free_segment(hole);
  return filled;
}

}  // namespace harvest
