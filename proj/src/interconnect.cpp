// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/interconnect.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <set>
#include <sstream>

namespace harvest {

std::string_view to_string(LinkKind kind) {
  return kind == LinkKind::PeerLink ? "peer" : "host";
}

void LinkSpec::validate() const {
  if (!(fixed_cost >= 0.0) || !std::isfinite(fixed_cost)) {
    throw InvalidSpec("link fixed_cost must be >= 0");
  }
  if (!(bandwidth > 0.0)) throw InvalidSpec("link bandwidth must be > 0");
  if (hops < 1) throw InvalidSpec("link hops must be >= 1");
  if (a == b) throw InvalidSpec("link endpoints must differ");
}

double transfer_time(const LinkParams& link, Bytes size) {
  return link.fixed_cost + static_cast<double>(size) / link.bandwidth;
}

double transfer_time(const LinkSpec& link, Bytes size) {
  return transfer_time(link.params(), size);
}

double rms_relative_error(const LinkParams& params, std::span<const CalibrationPoint> points) {
  if (points.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : points) {
    const double model = params.fixed_cost + p.size / params.bandwidth;
    const double rel = (model - p.latency) / p.latency;
    sum += rel * rel;
  }
  return std::sqrt(sum / static_cast<double>(points.size()));
}

LinkFit calibrate(std::span<const CalibrationPoint> points) {
  if (points.size() < 2) throw CalibrationError("calibration needs at least 2 points");
  for (const auto& p : points) {
    if (!(p.latency > 0.0)) throw CalibrationError("calibration latencies must be positive");
    if (!(p.size >= 0.0)) throw CalibrationError("calibration sizes must be non-negative");
  }
  // Weighted by 1 / latency^2 so the fit minimizes relative residuals, the
  // same quantity rms_relative_error reports.
  double sw = 0.0, mean_x = 0.0, mean_y = 0.0;
  for (const auto& p : points) {
    const double w = 1.0 / (p.latency * p.latency);
    sw += w;
    mean_x += w * p.size;
    mean_y += w * p.latency;
  }
  mean_x /= sw;
  mean_y /= sw;
  double sxx = 0.0, sxy = 0.0, spread = 0.0;
  for (const auto& p : points) {
    const double w = 1.0 / (p.latency * p.latency);
    const double dx = p.size - mean_x;
    sxx += w * dx * dx;
    sxy += w * dx * (p.latency - mean_y);
    spread = std::max(spread, std::abs(dx));
  }
  if (sxx <= 0.0 || spread <= 1e-12 * std::max(1.0, std::abs(mean_x))) {
    throw CalibrationError("calibration sizes are all equal");
  }
  double slope = sxy / sxx;
  double intercept = mean_y - slope * mean_x;
  if (intercept < 0.0) {
    double sx2 = 0.0, sxy0 = 0.0;
    for (const auto& p : points) {
      const double w = 1.0 / (p.latency * p.latency);
      sx2 += w * p.size * p.size;
      sxy0 += w * p.size * p.latency;
    }
    intercept = 0.0;
    slope = sxy0 / sx2;
  }
  if (!(slope > 0.0)) throw CalibrationError("calibration latency does not grow with size");
  LinkFit fit;
  fit.fixed_cost = intercept;
  fit.bandwidth = 1.0 / slope;
  fit.rms_relative_error = rms_relative_error({fit.fixed_cost, fit.bandwidth}, points);
  return fit;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace

std::vector<CalibrationPoint> parse_calibration_points(std::istream& in) {
  std::vector<CalibrationPoint> points;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto comma = view.find(',');
    CalibrationPoint p;
    if (comma == std::string_view::npos || !parse_double(view.substr(0, comma), p.size) ||
        !parse_double(view.substr(comma + 1), p.latency)) {
      throw CalibrationError("line " + std::to_string(line_no) +
                             ": expected 'size_bytes,latency_seconds'");
    }
    points.push_back(p);
  }
  return points;
}

Topology::Topology(std::vector<DeviceSpec> devices, std::vector<LinkSpec> links)
    : devices_(std::move(devices)), links_(std::move(links)) {}

bool Topology::has_device(DeviceId id) const {
  return std::any_of(devices_.begin(), devices_.end(),
                     [id](const DeviceSpec& d) { return d.device_id == id; });
}

const DeviceSpec& Topology::device(DeviceId id) const {
  for (const auto& d : devices_) {
    if (d.device_id == id) return d;
  }
  throw InvalidSpec("unknown device id " + std::to_string(id));
}

std::optional<std::size_t> Topology::find_link(DeviceId x, DeviceId y) const {
  for (std::size_t i = 0; i < links_.size(); ++i) {
    if (links_[i].connects(x, y)) return i;
  }
  return std::nullopt;
}

std::optional<int> Topology::hops(DeviceId x, DeviceId y) const {
  if (auto idx = find_link(x, y)) return links_[*idx].hops;
  return std::nullopt;
}

std::vector<DeviceId> Topology::devices_with_tier(Tier tier) const {
  std::vector<DeviceId> out;
  for (const auto& d : devices_) {
    if (d.tier == tier) out.push_back(d.device_id);
  }
  return out;
}

void Topology::validate() const {
  std::set<DeviceId> ids;
  for (const auto& d : devices_) {
    d.validate();
    if (!ids.insert(d.device_id).second) {
      throw InvalidSpec("duplicate device id " + std::to_string(d.device_id));
    }
  }
  std::set<std::pair<DeviceId, DeviceId>> pairs;
  for (const auto& l : links_) {
    l.validate();
    if (!ids.count(l.a) || !ids.count(l.b)) throw InvalidSpec("link references unknown device");
    if (!pairs.insert({std::min(l.a, l.b), std::max(l.a, l.b)}).second) {
      throw InvalidSpec("more than one link between devices " + std::to_string(l.a) + " and " +
                        std::to_string(l.b));
    }
  }
  for (DeviceId local : devices_with_tier(Tier::LocalHBM)) {
    for (const auto& d : devices_) {
      if (d.tier == Tier::LocalHBM) continue;
      if (!find_link(local, d.device_id)) {
        throw InvalidSpec("device " + std::to_string(d.device_id) +
                          " is not linked to compute device " + std::to_string(local));
      }
    }
  }
}

Topology make_topology(const TopologyConfig& config) {
  std::vector<DeviceSpec> devices;
  std::vector<LinkSpec> links;
  devices.push_back({kComputeDevice, Tier::LocalHBM, config.local_capacity, 0, 0});
  const DeviceId host_id = static_cast<DeviceId>(config.peers.size()) + 1;
  for (std::size_t i = 0; i < config.peers.size(); ++i) {
    DeviceSpec peer = config.peers[i];
    peer.device_id = static_cast<DeviceId>(i) + 1;
    peer.tier = Tier::PeerHBM;
    devices.push_back(peer);
    const int hops = i < config.peer_hops.size() ? config.peer_hops[i] : 1;
    links.push_back({LinkKind::PeerLink, config.peer_link.fixed_cost, config.peer_link.bandwidth,
                     kComputeDevice, peer.device_id, hops});
    links.push_back({LinkKind::HostLink, config.host_link.fixed_cost, config.host_link.bandwidth,
                     host_id, peer.device_id, 1});
  }
  devices.push_back({host_id, Tier::HostDRAM, config.host_capacity, 0, 0});
  links.push_back({LinkKind::HostLink, config.host_link.fixed_cost, config.host_link.bandwidth,
                   kComputeDevice, host_id, 1});
  Topology topology(std::move(devices), std::move(links));
  topology.validate();
  return topology;
}

Interconnect::Interconnect(Simulation& sim, Topology topology)
    : sim_(sim), topology_(std::move(topology)), busy_until_(topology_.links().size(), 0) {}

std::vector<std::size_t> Interconnect::route(DeviceId src, DeviceId dst) const {
  if (auto direct = topology_.find_link(src, dst)) return {*direct};
  if (topology_.allow_staging) {
    // Prefer host DRAM as the staging device, then any other device.
    std::vector<DeviceId> via = topology_.devices_with_tier(Tier::HostDRAM);
    for (const auto& d : topology_.devices()) {
      if (d.tier != Tier::HostDRAM) via.push_back(d.device_id);
    }
    for (DeviceId mid : via) {
      if (mid == src || mid == dst) continue;
      auto first = topology_.find_link(src, mid);
      auto second = topology_.find_link(mid, dst);
      if (first && second) return {*first, *second};
    }
  }
  throw RoutingError("no route from device " + std::to_string(src) + " to device " +
                     std::to_string(dst));
}

double Interconnect::route_time(DeviceId src, DeviceId dst, Bytes size) const {
  double total = 0.0;
  for (std::size_t idx : route(src, dst)) total += transfer_time(topology_.link(idx), size);
  return total;
}

ScheduledTransfer Interconnect::schedule_transfer(const TransferRequest& request,
                                                  Completion on_complete, Issuer issuer,
                                                  std::uint64_t generation) {
  const auto legs = route(request.src_device, request.dst_device);
  ScheduledTransfer scheduled;
  scheduled.id = next_id_++;
  SimTime ready = std::max(request.issue_time, sim_.now());
  for (std::size_t i = 0; i < legs.size(); ++i) {
    const std::size_t idx = legs[i];
    const SimTime start = std::max(ready, busy_until_[idx]);
    if (i == 0) scheduled.start = start;
    ready = start + to_sim_time(transfer_time(topology_.link(idx), request.size));
    busy_until_[idx] = ready;
  }
  scheduled.completion = ready;

  LogRecord issue;
  issue.kind = EventKind::TransferIssue;
  issue.issuer = issuer;
  issue.device = request.src_device;
  issue.base = request.src.base;
  issue.peer = request.dst_device;
  issue.peer_base = request.dst.base;
  issue.size = request.size;
  issue.generation = generation;
  issue.id = scheduled.id;
  issue.aux = request.tag;
  const std::uint64_t issue_seq = sim_.record(issue);

  inflight_.emplace(scheduled.id, InFlight{request, scheduled});
  sim_.schedule_at(scheduled.completion, [this, scheduled, issue, issue_seq,
                                          cb = std::move(on_complete)]() {
    inflight_.erase(scheduled.id);
    LogRecord done = issue;
    done.kind = EventKind::TransferComplete;
    done.aux = issue_seq;
    sim_.record(done);
    if (cb) cb(scheduled);
  });
  return scheduled;
}

std::optional<SimTime> Interconnect::last_inflight_completion(DeviceId device,
                                                             const Segment& region) const {
  std::optional<SimTime> latest;
  for (const auto& [id, f] : inflight_) {
    const auto& r = f.request;
    const Segment src{r.src.base, r.size};
    const Segment dst{r.dst.base, r.size};
    const bool touches = (r.src_device == device && src.overlaps(region)) ||
                         (r.dst_device == device && dst.overlaps(region));
    if (touches && (!latest || f.scheduled.completion > *latest)) latest = f.scheduled.completion;
  }
  return latest;
}

}  // namespace harvest
