// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/log_checks.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "harvest/memalloc.hpp"

namespace harvest {

namespace {

bool touches(const LogRecord& transfer, DeviceId device, const Segment& region) {
  const Segment src{transfer.base, transfer.size};
  const Segment dst{transfer.peer_base, transfer.size};
  return (transfer.device == device && src.overlaps(region)) ||
         (transfer.peer == device && dst.overlaps(region));
}

// Transfers issued but not yet completed, keyed by transfer id.
class InFlight {
 public:
  void observe(const LogRecord& r) {
    if (r.kind == EventKind::TransferIssue) open_[r.id] = r;
    if (r.kind == EventKind::TransferComplete) open_.erase(r.id);
  }
  const LogRecord* find(DeviceId device, const Segment& region) const {
    for (const auto& [id, t] : open_) {
      if (touches(t, device, region)) return &t;
    }
    return nullptr;
  }

 private:
  std::map<std::uint64_t, LogRecord> open_;
};

Violation make(std::size_t index, const std::string& text) { return Violation{index, text}; }

}  // namespace

std::optional<Violation> check_drain_before_free(const EventLog& log) {
  InFlight inflight;
  const auto& records = log.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const LogRecord& r = records[i];
    inflight.observe(r);
    if (r.kind != EventKind::Free && r.kind != EventKind::Invalidate) continue;
    if (const LogRecord* t = inflight.find(r.device, Segment{r.base, r.size})) {
      return make(i, std::string(to_string(r.kind)) + " of generation " +
                         std::to_string(r.generation) + " while transfer " +
                         std::to_string(t->id) + " is in flight");
    }
  }
  return std::nullopt;
}

std::optional<Violation> check_revocation_order(const EventLog& log) {
  struct Progress {
    bool revoking = false;
    std::optional<SimTime> invalidated;
    std::optional<SimTime> notified;
  };
  std::map<std::uint64_t, Progress> by_generation;
  const auto& records = log.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const LogRecord& r = records[i];
    const std::string gen = std::to_string(r.generation);
    switch (r.kind) {
      case EventKind::RevokeBegin:
        by_generation[r.generation].revoking = true;
        break;
      case EventKind::Invalidate: {
        Progress& p = by_generation[r.generation];
        if (!p.revoking) return make(i, "invalidate without revocation, generation " + gen);
        if (p.invalidated) return make(i, "second invalidate, generation " + gen);
        p.invalidated = r.time;
        break;
      }
      case EventKind::Callback: {
        Progress& p = by_generation[r.generation];
        if (!p.invalidated) return make(i, "callback before invalidate, generation " + gen);
        if (r.time <= *p.invalidated) {
          return make(i, "callback not strictly after invalidate, generation " + gen);
        }
        if (p.notified) return make(i, "second callback, generation " + gen);
        p.notified = r.time;
        break;
      }
      case EventKind::Free: {
        auto it = by_generation.find(r.generation);
        if (it == by_generation.end()) break;
        const Progress& p = it->second;
        if (p.revoking && !p.invalidated) {
          return make(i, "free before invalidate, generation " + gen);
        }
        const std::optional<SimTime> before = p.notified ? p.notified : p.invalidated;
        if (before && r.time <= *before) {
          return make(i, "free not strictly after notification, generation " + gen);
        }
        by_generation.erase(it);
        break;
      }
      default:
        break;
    }
  }
  return std::nullopt;
}

std::optional<Violation> check_no_runtime_transfers(const EventLog& log) {
  const auto& records = log.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const LogRecord& r = records[i];
    if (r.kind == EventKind::TransferIssue && r.issuer == Issuer::Runtime) {
      return make(i, "runtime issued transfer " + std::to_string(r.id));
    }
  }
  return std::nullopt;
}

std::optional<Violation> check_stage_residency(const EventLog& log) {
  std::map<std::uint64_t, std::int64_t> outstanding;
  const auto& records = log.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const LogRecord& r = records[i];
    if (r.kind == EventKind::FetchIssue) ++outstanding[r.id];
    if (r.kind == EventKind::FetchComplete) {
      if (--outstanding[r.id] < 0) {
        return make(i, "fetch completion without issue, stage " + std::to_string(r.id));
      }
    }
    if (r.kind == EventKind::StageStart) {
      auto it = outstanding.find(r.id);
      if (it != outstanding.end() && it->second != 0) {
        return make(i, "stage " + std::to_string(r.id) + " started with " +
                           std::to_string(it->second) + " fetches outstanding");
      }
    }
  }
  return std::nullopt;
}

std::optional<Violation> check_all(const EventLog& log) {
  if (auto v = check_drain_before_free(log)) return v;
  if (auto v = check_revocation_order(log)) return v;
  if (auto v = check_no_runtime_transfers(log)) return v;
  return check_stage_residency(log);
}

void require_log_invariants(const EventLog& log, const std::string& context) {
  auto v = check_all(log);
  if (!v) return;
  constexpr std::size_t kContext = 8;
  const std::size_t first = v->index > kContext ? v->index - kContext : 0;
  std::ostringstream excerpt;
  log.dump(excerpt, first, v->index + kContext + 1);
  throw InvariantViolation(context + ": " + v->message, excerpt.str());
}

}  // namespace harvest
