// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "harvest/memalloc.hpp"
#include "harvest/sim.hpp"

namespace harvest {

enum class LinkKind : std::uint8_t { PeerLink, HostLink };

std::string_view to_string(LinkKind kind);

/// Affine link cost: latency = fixed_cost + size / bandwidth.
struct LinkParams {
  double fixed_cost = 0.0;  // seconds
  double bandwidth = 1.0;   // bytes per second
};

struct LinkSpec {
  LinkKind kind = LinkKind::PeerLink;
  double fixed_cost = 0.0;  // seconds
  double bandwidth = 1.0;   // bytes per second
  DeviceId a = 0;
  DeviceId b = 0;
  int hops = 1;

  LinkParams params() const { return {fixed_cost, bandwidth}; }
  bool connects(DeviceId x, DeviceId y) const { return (a == x && b == y) || (a == y && b == x); }
  void validate() const;
};

double transfer_time(const LinkSpec& link, Bytes size);
double transfer_time(const LinkParams& link, Bytes size);

class CalibrationError : public HarvestError {
 public:
  using HarvestError::HarvestError;
};

struct CalibrationPoint {
  double size = 0.0;     // bytes
  double latency = 0.0;  // seconds
};

struct LinkFit {
  double fixed_cost = 0.0;
  double bandwidth = 0.0;
  double rms_relative_error = 0.0;
};

/// Least-squares fit of latency = a + size / B with residuals weighted by
/// 1 / latency^2 (relative error). A negative intercept is clamped to zero
/// and the slope refit through the origin.
LinkFit calibrate(std::span<const CalibrationPoint> points);

/// RMS of (model - measured) / measured over `points`.
double rms_relative_error(const LinkParams& params, std::span<const CalibrationPoint> points);

/// Reads "size_bytes,latency_seconds" lines. '#' starts a comment; blank
/// lines are skipped. Malformed lines throw CalibrationError naming the line.
std::vector<CalibrationPoint> parse_calibration_points(std::istream& in);

class RoutingError : public HarvestError {
 public:
  using HarvestError::HarvestError;
};

class Topology {
 public:
  Topology() = default;
  Topology(std::vector<DeviceSpec> devices, std::vector<LinkSpec> links);

  const std::vector<DeviceSpec>& devices() const { return devices_; }
  const std::vector<LinkSpec>& links() const { return links_; }
  const DeviceSpec& device(DeviceId id) const;
  bool has_device(DeviceId id) const;

  /// Index into links() of the direct link between two devices, if any.
  std::optional<std::size_t> find_link(DeviceId x, DeviceId y) const;
  const LinkSpec& link(std::size_t index) const { return links_.at(index); }

  /// Hop count of the direct link, or nullopt when not directly connected.
  std::optional<int> hops(DeviceId x, DeviceId y) const;

  std::vector<DeviceId> devices_with_tier(Tier tier) const;

  /// Checks the link invariants and that every peer and host device has a
  /// direct link to every local device. Throws InvalidSpec.
  void validate() const;

  /// Allow transfers between unlinked devices to stage through a device that
  /// links to both (host DRAM preferred).
  bool allow_staging = false;

 private:
  std::vector<DeviceSpec> devices_;
  std::vector<LinkSpec> links_;
};

/// Convenience layout: device 0 is the compute GPU, devices 1..N are peers,
/// device N+1 is host DRAM. Every peer links to the compute GPU with
/// `peer_link` and to host DRAM with `host_link`.
struct TopologyConfig {
  Bytes local_capacity = 80 * GiB;
  std::vector<DeviceSpec> peers;  // device ids are reassigned 1..N
  std::vector<int> peer_hops;     // defaults to 1 per peer
  Bytes host_capacity = 640 * GiB;
  LinkParams peer_link;
  LinkParams host_link;
};

Topology make_topology(const TopologyConfig& config);

inline constexpr DeviceId kComputeDevice = 0;

struct TransferRequest {
  DeviceId src_device = 0;
  Segment src;
  DeviceId dst_device = 0;
  Segment dst;
  Bytes size = 0;
  SimTime issue_time = 0;
  std::uint64_t tag = 0;
};

using TransferId = std::uint64_t;

struct ScheduledTransfer {
  TransferId id = 0;
  SimTime start = 0;
  SimTime completion = 0;
};

/// Per-link FIFO transfer scheduling on top of the event queue.
///
/// Each link is busy until its previously scheduled transfer completes; a new
/// transfer starts at max(issue_time, busy_until). Completion runs as an
/// event, after which the transfer is no longer in flight.
class Interconnect {
 public:
  using Completion = std::function<void(const ScheduledTransfer&)>;

  Interconnect(Simulation& sim, Topology topology);

  ScheduledTransfer schedule_transfer(const TransferRequest& request, Completion on_complete,
                                      Issuer issuer = Issuer::Application,
                                      std::uint64_t generation = 0);

  /// Modeled duration of a transfer between two devices, ignoring queueing.
  double route_time(DeviceId src, DeviceId dst, Bytes size) const;

  /// Latest completion among in-flight transfers whose source or destination
  /// region overlaps `region` on `device`.
  std::optional<SimTime> last_inflight_completion(DeviceId device, const Segment& region) const;

  std::size_t inflight_count() const { return inflight_.size(); }
  SimTime busy_until(std::size_t link_index) const { return busy_until_.at(link_index); }

  const Topology& topology() const { return topology_; }
  Simulation& sim() { return sim_; }

 private:
  struct InFlight {
    TransferRequest request;
    ScheduledTransfer scheduled;
  };

  std::vector<std::size_t> route(DeviceId src, DeviceId dst) const;

  Simulation& sim_;
  Topology topology_;
  std::vector<SimTime> busy_until_;
  std::map<TransferId, InFlight> inflight_;
  TransferId next_id_ = 1;
};

}  // namespace harvest
