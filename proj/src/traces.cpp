// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/traces.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>

#include "harvest/hash.hpp"

namespace harvest {

namespace {

constexpr std::string_view kHeader = "machine_id,timestamp,used,capacity";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  if (text.empty()) return false;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

// Returns an empty string on success, otherwise the reason.
std::string parse_row(std::string_view line, SnapshotRecord& rec) {
  const auto fields = split(line, ',');
  if (fields.size() != 4) return "expected 4 fields, got " + std::to_string(fields.size());
  if (fields[0].empty()) return "empty machine_id";
  rec.machine_id = std::string(fields[0]);
  if (!parse_number(fields[1], rec.timestamp) || !std::isfinite(rec.timestamp)) {
    return "timestamp is not a number";
  }
  if (!parse_number(fields[2], rec.used)) return "used is not a non-negative integer";
  if (!parse_number(fields[3], rec.capacity)) return "capacity is not a non-negative integer";
  if (rec.capacity == 0) return "capacity must be > 0";
  if (rec.used > rec.capacity) return "used exceeds capacity";
  return {};
}

}  // namespace

ParseResult parse_snapshots(std::istream& in, ParseMode mode) {
  ParseResult result;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (!header_seen) {
      if (view != kHeader) {
        throw TraceError("line " + std::to_string(line_no) + ": expected header '" +
                         std::string(kHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    SnapshotRecord rec;
    if (auto err = parse_row(view, rec); !err.empty()) {
      const std::string message = "line " + std::to_string(line_no) + ": " + err;
      if (mode == ParseMode::Strict) throw TraceError(message);
      ++result.rejected;
      result.errors.push_back(message);
      continue;
    }
    result.records.push_back(std::move(rec));
  }
  if (!header_seen) throw TraceError("missing header '" + std::string(kHeader) + "'");
  return result;
}

void write_snapshots(std::ostream& out, std::span<const SnapshotRecord> records) {
  out << kHeader << '\n';
  char buf[64];
  for (const auto& r : records) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), r.timestamp);
    out << r.machine_id << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf)) << ','
        << r.used << ',' << r.capacity << '\n';
  }
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "mean") return Aggregation::Mean;
  if (text == "max") return Aggregation::Max;
  if (text == "per_snapshot") return Aggregation::PerSnapshot;
  throw ConfigError("unknown aggregation '" + std::string(text) +
                    "' (expected mean, max or per_snapshot)");
}

std::vector<double> utilization_samples(std::span<const SnapshotRecord> records,
                                        Aggregation aggregation) {
  std::vector<double> out;
  if (aggregation == Aggregation::PerSnapshot) {
    for (const auto& r : records) {
      out.push_back(static_cast<double>(r.used) / static_cast<double>(r.capacity));
    }
    return out;
  }
  struct Acc {
    double sum = 0.0;
    double max = 0.0;
    std::size_t n = 0;
  };
  std::map<std::string, std::size_t> index;
  std::vector<Acc> acc;
  for (const auto& r : records) {
    auto [it, inserted] = index.try_emplace(r.machine_id, acc.size());
    if (inserted) acc.emplace_back();
    Acc& a = acc[it->second];
    const double u = static_cast<double>(r.used) / static_cast<double>(r.capacity);
    a.sum += u;
    a.max = std::max(a.max, u);
    ++a.n;
  }
  for (const auto& a : acc) {
    out.push_back(aggregation == Aggregation::Max ? a.max : a.sum / static_cast<double>(a.n));
  }
  return out;
}

double UtilizationCDF::at(double u) const {
  if (samples.empty()) return 0.0;
  const auto below = std::upper_bound(samples.begin(), samples.end(), u) - samples.begin();
  return static_cast<double>(below) / static_cast<double>(samples.size());
}

UtilizationCDF compute_cdf(std::span<const SnapshotRecord> records, int resolution,
                           Aggregation aggregation) {
  if (records.empty()) throw TraceError("no snapshot records");
  if (resolution < 1) throw TraceError("cdf resolution must be >= 1");
  UtilizationCDF cdf;
  cdf.samples = utilization_samples(records, aggregation);
  std::sort(cdf.samples.begin(), cdf.samples.end());
  for (int i = 0; i <= resolution; ++i) {
    const double u = static_cast<double>(i) / resolution;
    cdf.points.push_back({u, cdf.at(u)});
  }
  return cdf;
}

void write_cdf(std::ostream& out, const UtilizationCDF& cdf) {
  out << "utilization,cumulative_fraction\n";
  char buf[64];
  for (const auto& p : cdf.points) {
    auto [a, ea] = std::to_chars(buf, buf + 32, p.utilization);
    auto [b, eb] = std::to_chars(a + 1, buf + sizeof(buf), p.cumulative);
    *a = ',';
    out << std::string_view(buf, static_cast<std::size_t>(b - buf)) << '\n';
  }
}

Bytes AvailabilityTimeline::at(SimTime t) const {
  if (steps.empty() || t < steps.front().time) return steps.empty() ? 0 : steps.front().harvestable;
  auto it = std::upper_bound(steps.begin(), steps.end(), t,
                             [](SimTime v, const AvailabilityStep& s) { return v < s.time; });
  return std::prev(it)->harvestable;
}

std::vector<std::pair<Bytes, double>> AvailabilityTimeline::occupancy(SimTime horizon) const {
  std::map<Bytes, SimTime> time_at;
  SimTime total = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const SimTime begin = steps[i].time;
    const SimTime end = std::min(horizon, i + 1 < steps.size() ? steps[i + 1].time : horizon);
    if (end <= begin) continue;
    time_at[steps[i].harvestable] += end - begin;
    total += end - begin;
  }
  std::vector<std::pair<Bytes, double>> out;
  for (const auto& [level, t] : time_at) {
    out.emplace_back(level, total > 0 ? static_cast<double>(t) / static_cast<double>(total) : 0.0);
  }
  return out;
}

AvailabilityTimeline availability_from_trace(std::span<const SnapshotRecord> records,
                                             const std::string& machine_id,
                                             const DeviceSpec& device, double time_scale) {
  device.validate();
  if (!(time_scale > 0.0)) throw InvalidSpec("availability time_scale must be > 0");
  std::vector<const SnapshotRecord*> rows;
  for (const auto& r : records) {
    if (r.machine_id == machine_id) rows.push_back(&r);
  }
  if (rows.empty()) throw TraceError("no snapshots for machine '" + machine_id + "'");
  std::stable_sort(rows.begin(), rows.end(), [](const SnapshotRecord* a, const SnapshotRecord* b) {
    return a->timestamp < b->timestamp;
  });

  const Bytes usable = device.usable();
  const Bytes withheld = device.reserved + device.headroom;
  AvailabilityTimeline timeline;
  const double t0 = rows.front()->timestamp;
  for (const SnapshotRecord* r : rows) {
    // capacity * (1 - used / record_capacity), exact in integers.
    const auto idle = static_cast<Bytes>(
        static_cast<unsigned __int128>(r->capacity - r->used) * device.capacity / r->capacity);
    const Bytes harvestable = idle > withheld ? std::min(usable, idle - withheld) : 0;
    const SimTime t = to_sim_time((r->timestamp - t0) * time_scale);
    if (!timeline.steps.empty() && timeline.steps.back().time == t) {
      timeline.steps.back().harvestable = harvestable;
    } else {
      timeline.steps.push_back({t, harvestable});
    }
  }
  // Drop steps that do not change the level.
  std::vector<AvailabilityStep> merged;
  for (const auto& s : timeline.steps) {
    if (merged.empty() || merged.back().harvestable != s.harvestable) merged.push_back(s);
  }
  timeline.steps = std::move(merged);
  return timeline;
}

AvailabilityTimeline markov_availability(std::span<const Bytes> levels,
                                         std::span<const double> mean_sojourns, double horizon,
                                         std::uint64_t seed) {
  if (levels.empty()) throw InvalidSpec("markov availability needs at least one level");
  if (levels.size() != mean_sojourns.size()) {
    throw InvalidSpec("markov availability: levels and mean_sojourns differ in length");
  }
  for (double m : mean_sojourns) {
    if (!(m > 0.0)) throw InvalidSpec("markov availability: sojourns must be > 0");
  }
  AvailabilityTimeline timeline;
  timeline.steps.push_back({0, levels[0]});
  if (levels.size() == 1) return timeline;

  std::mt19937_64 rng(seed);
  std::size_t state = 0;
  double t = 0.0;
  const std::size_t n = levels.size();
  while (true) {
    t += -mean_sojourns[state] * std::log1p(-unit_interval(rng()));
    if (t >= horizon) break;
    std::size_t next = static_cast<std::size_t>(rng() % (n - 1));
    if (next >= state) ++next;
    state = next;
    const SimTime when = to_sim_time(t);
    if (timeline.steps.back().time == when) {
      timeline.steps.back().harvestable = levels[state];
    } else {
      timeline.steps.push_back({when, levels[state]});
    }
  }
  return timeline;
}

AvailabilityDriver::AvailabilityDriver(HarvestRuntime& runtime, DeviceId device,
                                       AvailabilityTimeline timeline)
    : runtime_(runtime), device_(device), timeline_(std::move(timeline)) {}

void AvailabilityDriver::start() {
  const SimTime base = runtime_.sim().now();
  for (const auto& step : timeline_.steps) {
    const Bytes level = step.harvestable;
    runtime_.sim().schedule_at(base + step.time, [this, level]() { apply(level); });
  }
}

void AvailabilityDriver::apply(Bytes harvestable) {
  const Bytes usable = runtime_.device(device_).spec().usable();
  const Bytes target = usable - std::min(usable, harvestable);
  if (target > claimed_target_) {
    const auto victims = runtime_.external_reclaim(device_, target - claimed_target_);
    ++reclaims_;
    revoked_ += victims.size();
    for (const auto& h : victims) revoked_bytes_ += h.size;
  } else if (target < claimed_target_) {
    runtime_.external_release(device_, claimed_target_ - target);
    ++releases_;
  }
  claimed_target_ = target;
}

}  // namespace harvest
