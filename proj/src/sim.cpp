// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/sim.hpp"

#include <algorithm>
#include <ostream>

namespace harvest {

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::TransferIssue: return "transfer_issue";
    case EventKind::TransferComplete: return "transfer_complete";
    case EventKind::Alloc: return "alloc";
    case EventKind::AppFree: return "app_free";
    case EventKind::RevokeBegin: return "revoke_begin";
    case EventKind::Invalidate: return "invalidate";
    case EventKind::Callback: return "callback";
    case EventKind::Free: return "free";
    case EventKind::ExternalClaim: return "external_claim";
    case EventKind::ExternalRelease: return "external_release";
    case EventKind::StageStart: return "stage_start";
    case EventKind::StageEnd: return "stage_end";
    case EventKind::FetchIssue: return "fetch_issue";
    case EventKind::FetchComplete: return "fetch_complete";
    case EventKind::Reconstruct: return "reconstruct";
    case EventKind::Migration: return "migration";
    case EventKind::Eviction: return "eviction";
    case EventKind::Reload: return "reload";
    case EventKind::Note: return "note";
  }
  return "unknown";
}

std::string_view to_string(Tier tier) {
  switch (tier) {
    case Tier::LocalHBM: return "local";
    case Tier::PeerHBM: return "peer";
    case Tier::HostDRAM: return "host";
  }
  return "unknown";
}

std::string_view to_string(Durability durability) {
  return durability == Durability::Backed ? "backed" : "lossy";
}

Tier parse_tier(std::string_view text) {
  if (text == "local") return Tier::LocalHBM;
  if (text == "peer") return Tier::PeerHBM;
  if (text == "host") return Tier::HostDRAM;
  throw ConfigError("unknown tier '" + std::string(text) + "' (expected local, peer or host)");
}

std::uint64_t EventLog::append(LogRecord record) {
  record.seq = next_seq_++;
  if (enabled_) records_.push_back(record);
  return record.seq;
}

void EventLog::dump(std::ostream& out, std::size_t first, std::size_t last) const {
  last = std::min(last, records_.size());
  for (std::size_t i = first; i < last; ++i) {
    const auto& r = records_[i];
    out << r.time << ' ' << r.seq << ' ' << to_string(r.kind)
        << (r.issuer == Issuer::Runtime ? " runtime" : " app") << " dev=" << r.device
        << " peer=" << r.peer << " peer_base=" << r.peer_base << " base=" << r.base << " size=" << r.size
        << " gen=" << r.generation << " id=" << r.id << " aux=" << r.aux << '\n';
  }
}

void Simulation::schedule_at(SimTime when, Action action) {
  if (when < now_) when = now_;
  queue_.push(Entry{when, next_order_++, std::move(action)});
}

bool Simulation::step() {
  if (queue_.empty()) return false;
  // priority_queue::top is const; the action is moved out via a copy of the
  // entry before popping.
  Entry entry = queue_.top();
  queue_.pop();
  now_ = entry.time;
  entry.action();
  return true;
}

void Simulation::run() {
  while (step()) {
  }
}

void Simulation::run_until(SimTime until) {
  while (!queue_.empty() && queue_.top().time <= until) step();
  if (now_ < until) now_ = until;
}

std::uint64_t Simulation::record(LogRecord record) {
  record.time = now_;
  return log_.append(record);
}

}  // namespace harvest
