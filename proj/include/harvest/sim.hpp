// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "harvest/types.hpp"

namespace harvest {

enum class EventKind : std::uint8_t {
  TransferIssue,
  TransferComplete,
  Alloc,
  AppFree,
  RevokeBegin,
  Invalidate,
  Callback,
  Free,
  ExternalClaim,
  ExternalRelease,
  StageStart,
  StageEnd,
  FetchIssue,
  FetchComplete,
  Reconstruct,
  Migration,
  Eviction,
  Reload,
  Note,
};

std::string_view to_string(EventKind kind);

enum class Issuer : std::uint8_t { Runtime, Application };

/// One line of the simulation event log. Field meaning depends on `kind`;
/// unused fields stay zero.
struct LogRecord {
  SimTime time = 0;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::Note;
  Issuer issuer = Issuer::Application;
  DeviceId device = -1;
  Bytes base = 0;
  Bytes size = 0;
  std::uint64_t generation = 0;  // harvest handle generation, if any
  std::uint64_t id = 0;          // transfer id, stage index, block id, ...
  std::uint64_t aux = 0;         // kind-specific extra (issue seq, reason, tier, ...)
  DeviceId peer = -1;            // second endpoint for transfers
  Bytes peer_base = 0;
};

class EventLog {
 public:
  void set_enabled(bool enabled) { enabled_ = enabled; }
  bool enabled() const { return enabled_; }

  /// Appends a record, assigning its sequence number. Returns the sequence.
  std::uint64_t append(LogRecord record);

  const std::vector<LogRecord>& records() const { return records_; }
  std::uint64_t next_seq() const { return next_seq_; }
  void clear() { records_.clear(); }

  /// Writes records [first, last) as line-oriented text.
  void dump(std::ostream& out, std::size_t first = 0,
            std::size_t last = static_cast<std::size_t>(-1)) const;

 private:
  bool enabled_ = true;
  std::uint64_t next_seq_ = 0;
  std::vector<LogRecord> records_;
};

/// Deterministic discrete-event core. Events at equal timestamps run in the
/// order they were scheduled.
class Simulation {
 public:
  using Action = std::function<void()>;

  SimTime now() const { return now_; }

  void schedule_at(SimTime when, Action action);
  void schedule_after(SimTime delay, Action action) { schedule_at(now_ + delay, std::move(action)); }

  /// Runs the next event. Returns false when the queue is empty.
  bool step();
  void run();
  /// Runs every event with timestamp <= `until`, then advances time to it.
  void run_until(SimTime until);
  bool idle() const { return queue_.empty(); }
  std::size_t pending() const { return queue_.size(); }

  EventLog& log() { return log_; }
  const EventLog& log() const { return log_; }

  /// Convenience: stamps `record` with the current time and appends it.
  std::uint64_t record(LogRecord record);

 private:
  struct Entry {
    SimTime time;
    std::uint64_t order;
    Action action;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.time != b.time ? a.time > b.time : a.order > b.order;
    }
  };

  SimTime now_ = 0;
  std::uint64_t next_order_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, Later> queue_;
  EventLog log_;
};

}  // namespace harvest
