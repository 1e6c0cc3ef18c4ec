// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "harvest/hash.hpp"
#include "harvest/log_checks.hpp"
#include "harvest/profiles.hpp"

namespace harvest {

namespace pt = boost::property_tree;
namespace fs = std::filesystem;

std::string_view to_string(WorkloadKind kind) {
  switch (kind) {
    case WorkloadKind::MoE: return "moe";
    case WorkloadKind::KV: return "kv";
    case WorkloadKind::Mixed: return "mixed";
  }
  return "unknown";
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw HarvestError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw HarvestError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

// ---------------------------------------------------------------------------
// Field parsing

std::string trimmed(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void fail(const std::string& field, const std::string& message) {
  throw ConfigError(field + ": " + message);
}

std::vector<std::string> split_list(const std::string& field, const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trimmed(item);
    if (item.empty()) fail(field, "empty list element in '" + text + "'");
    out.push_back(item);
  }
  return out;
}

double to_double(const std::string& field, const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    fail(field, "'" + text + "' is not a number");
  }
  return v;
}

std::int64_t to_int(const std::string& field, const std::string& text) {
  std::int64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    fail(field, "'" + text + "' is not an integer");
  }
  return v;
}

std::uint64_t to_uint(const std::string& field, const std::string& text) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    fail(field, "'" + text + "' is not a non-negative integer");
  }
  return v;
}

bool to_bool(const std::string& field, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  fail(field, "'" + text + "' is not a boolean");
}

template <typename Fn>
auto convert(const std::string& field, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(field, 0) == 0) throw;
    fail(field, what);
  }
}

Bytes to_bytes(const std::string& field, const std::string& text, Bytes unit) {
  const double v = to_double(field, text);
  if (v < 0.0) fail(field, "must be >= 0");
  return static_cast<Bytes>(std::llround(v * static_cast<double>(unit)));
}

// One INI section with unknown-key detection.
class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  std::string field(const std::string& key) const { return "[" + name_ + "] " + key; }

  std::optional<std::string> get(const std::string& key) {
    known_.insert(key);
    if (!tree_) return std::nullopt;
    auto v = tree_->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trimmed(*v);
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, child] : *tree_) {
      if (!known_.count(key)) fail(field(key), "unknown key");
    }
  }

 private:
  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> known_;
};

WorkloadKind parse_workload(const std::string& text) {
  if (text == "moe") return WorkloadKind::MoE;
  if (text == "kv") return WorkloadKind::KV;
  if (text == "mixed") return WorkloadKind::Mixed;
  throw ConfigError("unknown workload '" + text + "' (expected moe, kv or mixed)");
}

ReclaimOrder parse_reclaim_order(const std::string& text) {
  if (text == "lru") return ReclaimOrder::LRU;
  if (text == "fifo") return ReclaimOrder::FIFO;
  if (text == "largest_first") return ReclaimOrder::LargestFirst;
  throw ConfigError("unknown reclaim order '" + text + "' (expected lru, fifo or largest_first)");
}

Durability parse_durability(const std::string& text) {
  if (text == "lossy") return Durability::Lossy;
  if (text == "backed") return Durability::Backed;
  throw ConfigError("unknown durability '" + text + "' (expected lossy or backed)");
}

AvailabilitySource parse_source(const std::string& text) {
  if (text == "none") return AvailabilitySource::None;
  if (text == "markov") return AvailabilitySource::Markov;
  if (text == "trace") return AvailabilitySource::Trace;
  throw ConfigError("unknown availability source '" + text + "' (expected none, markov or trace)");
}

ParseMode parse_mode(const std::string& text) {
  if (text == "strict") return ParseMode::Strict;
  if (text == "lenient") return ParseMode::Lenient;
  throw ConfigError("unknown parse mode '" + text + "' (expected strict or lenient)");
}

std::vector<double> double_list(const std::string& field, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(field, text)) out.push_back(to_double(field, item));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loading and validation

Scenario parse_scenario(std::istream& in, const fs::path& base_dir) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("scenario syntax: line " + std::to_string(e.line()) + ": " + e.message());
  }

  static const std::set<std::string> kSections = {"run",  "topology",     "moe",
                                                  "kv",   "availability", "debug"};
  for (const auto& [name, child] : tree) {
    if (child.empty() && !child.data().empty()) fail(name, "key outside of a section");
    if (!kSections.count(name)) fail("[" + name + "]", "unknown section");
  }
  auto section = [&](const std::string& name) {
    auto child = tree.get_child_optional(name);
    return Section(name, child ? &*child : nullptr);
  };

  Scenario s;

  Section run = section("run");
  if (auto v = run.get("name")) s.name = *v;
  if (auto v = run.get("workload")) {
    s.workload = convert(run.field("workload"), [&] { return parse_workload(*v); });
  } else {
    fail(run.field("workload"), "required");
  }
  if (auto v = run.get("seeds")) {
    for (const auto& item : split_list(run.field("seeds"), *v)) {
      s.seeds.push_back(to_uint(run.field("seeds"), item));
    }
  }
  if (auto v = run.get("profile")) s.profile = *v;
  if (auto v = run.get("output")) s.output = base_dir / *v;
  run.reject_unknown();

  Section topo = section("topology");
  if (auto v = topo.get("peers")) s.peers = static_cast<int>(to_int(topo.field("peers"), *v));
  if (auto v = topo.get("peer_capacity_gib")) {
    s.peer_capacity = to_bytes(topo.field("peer_capacity_gib"), *v, GiB);
  }
  if (auto v = topo.get("reserved_gib")) s.reserved = to_bytes(topo.field("reserved_gib"), *v, GiB);
  if (auto v = topo.get("headroom_gib")) s.headroom = to_bytes(topo.field("headroom_gib"), *v, GiB);
  if (auto v = topo.get("policy")) {
    s.policy.kind = convert(topo.field("policy"), [&] { return parse_policy(*v); });
  }
  if (auto v = topo.get("reclaim_order")) {
    s.policy.reclaim_order =
        convert(topo.field("reclaim_order"), [&] { return parse_reclaim_order(*v); });
  }
  if (auto v = topo.get("fairness_bytes_per_s")) {
    s.policy.fairness_bytes_per_second = to_double(topo.field("fairness_bytes_per_s"), *v);
  }
  if (auto v = topo.get("fairness_burst_bytes")) {
    s.policy.fairness_burst_bytes = to_double(topo.field("fairness_burst_bytes"), *v);
  }
  if (auto v = topo.get("stability_window_s")) {
    s.policy.stability_window_seconds = to_double(topo.field("stability_window_s"), *v);
  }
  if (auto v = topo.get("stability_threshold")) {
    s.policy.stability_threshold = static_cast<int>(to_int(topo.field("stability_threshold"), *v));
  }
  topo.reject_unknown();

  Section moe = section("moe");
  if (auto v = moe.get("models")) s.moe.models = split_list(moe.field("models"), *v);
  if (auto v = moe.get("fractions")) s.moe.fractions_pct = double_list(moe.field("fractions"), *v);
  if (auto v = moe.get("tiers")) {
    s.moe.tiers.clear();
    for (const auto& item : split_list(moe.field("tiers"), *v)) {
      s.moe.tiers.push_back(convert(moe.field("tiers"), [&] { return parse_tier(item); }));
    }
  }
  if (auto v = moe.get("speedup_fraction")) {
    s.moe.speedup_fraction_pct = to_double(moe.field("speedup_fraction"), *v);
  }
  if (auto v = moe.get("skew")) s.moe.routing.skew = to_double(moe.field("skew"), *v);
  if (auto v = moe.get("drift_period")) {
    s.moe.routing.drift_period = static_cast<int>(to_int(moe.field("drift_period"), *v));
  }
  if (auto v = moe.get("microbatch_tokens")) {
    s.moe.pipeline.microbatch_tokens = static_cast<int>(to_int(moe.field("microbatch_tokens"), *v));
  }
  if (auto v = moe.get("num_microbatches")) {
    s.moe.pipeline.num_microbatches = static_cast<int>(to_int(moe.field("num_microbatches"), *v));
  }
  if (auto v = moe.get("decode_steps")) {
    s.moe.pipeline.decode_steps = static_cast<int>(to_int(moe.field("decode_steps"), *v));
  }
  moe.reject_unknown();

  Section kv = section("kv");
  if (auto v = kv.get("models")) s.kv.models = split_list(kv.field("models"), *v);
  if (auto v = kv.get("entries")) {
    s.kv.entries.clear();
    for (const auto& item : split_list(kv.field("entries"), *v)) {
      s.kv.entries.push_back(static_cast<int>(to_int(kv.field("entries"), item)));
    }
  }
  if (auto v = kv.get("sequences")) {
    s.kv.workload.sequences = static_cast<int>(to_int(kv.field("sequences"), *v));
  }
  if (auto v = kv.get("prompt_tokens")) {
    s.kv.workload.prompt_tokens = static_cast<int>(to_int(kv.field("prompt_tokens"), *v));
  }
  if (auto v = kv.get("decode_steps")) {
    s.kv.workload.decode_steps = static_cast<int>(to_int(kv.field("decode_steps"), *v));
  }
  if (auto v = kv.get("durability")) {
    s.kv.workload.durability = convert(kv.field("durability"), [&] { return parse_durability(*v); });
  }
  if (auto v = kv.get("eviction")) {
    s.kv.offload.order = convert(kv.field("eviction"), [&] { return parse_eviction_order(*v); });
  }
  if (auto v = kv.get("local_watermark")) {
    s.kv.offload.local_watermark = to_double(kv.field("local_watermark"), *v);
  }
  if (auto v = kv.get("block_size")) {
    s.kv.block_size = static_cast<int>(to_int(kv.field("block_size"), *v));
  }
  if (auto v = kv.get("local_capacity_mib")) {
    s.kv.local_capacity = to_bytes(kv.field("local_capacity_mib"), *v, MiB);
  }
  kv.reject_unknown();

  Section av = section("availability");
  if (auto v = av.get("source")) {
    s.availability.source = convert(av.field("source"), [&] { return parse_source(*v); });
  }
  if (auto v = av.get("levels_pct")) {
    s.availability.levels_pct = double_list(av.field("levels_pct"), *v);
  }
  if (auto v = av.get("mean_sojourn_s")) {
    s.availability.mean_sojourn_s = double_list(av.field("mean_sojourn_s"), *v);
  }
  if (auto v = av.get("horizon_s")) s.availability.horizon_s = to_double(av.field("horizon_s"), *v);
  if (auto v = av.get("trace")) s.availability.trace = base_dir / *v;
  if (auto v = av.get("machine")) s.availability.machine = *v;
  if (auto v = av.get("time_scale")) {
    s.availability.time_scale = to_double(av.field("time_scale"), *v);
  }
  if (auto v = av.get("parse")) {
    s.availability.parse_mode = convert(av.field("parse"), [&] { return parse_mode(*v); });
  }
  if (auto v = av.get("moe_fraction")) {
    s.availability.moe_fraction_pct = to_double(av.field("moe_fraction"), *v);
  }
  av.reject_unknown();

  Section debug = section("debug");
  if (auto v = debug.get("inject_log_fault")) {
    s.inject_log_fault = to_bool(debug.field("inject_log_fault"), *v);
  }
  debug.reject_unknown();

  return s;
}

Scenario load_scenario(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("scenario: cannot read '" + path.string() + "'");
  return parse_scenario(in, path.parent_path());
}

void Scenario::validate() const {
  if (seeds.empty()) fail("[run] seeds", "at least one seed is required");
  convert("[run] profile", [&] { return calibration_profile(profile); });
  if (peers < 0) fail("[topology] peers", "must be >= 0");
  const CalibrationProfile& cal = calibration_profile(profile);
  const Bytes capacity = peer_capacity > 0 ? peer_capacity : cal.peer_capacity;
  if (reserved + headroom >= capacity) {
    fail("[topology] reserved_gib", "reserved + headroom must be below the peer capacity");
  }
  if (policy.stability_threshold < 1) fail("[topology] stability_threshold", "must be >= 1");
  if (!(policy.stability_window_seconds > 0.0)) fail("[topology] stability_window_s", "must be > 0");
  if (policy.fairness_bytes_per_second < 0.0) fail("[topology] fairness_bytes_per_s", "must be >= 0");
  if (policy.fairness_burst_bytes < 0.0) fail("[topology] fairness_burst_bytes", "must be >= 0");

  const bool wants_moe = workload != WorkloadKind::KV;
  const bool wants_kv = workload != WorkloadKind::MoE;
  if (wants_moe) {
    if (moe.models.empty()) fail("[moe] models", "at least one model is required");
    for (const auto& m : moe.models) convert("[moe] models", [&] { return moe_profile(m); });
    if (moe.fractions_pct.empty()) fail("[moe] fractions", "at least one fraction is required");
    for (double f : moe.fractions_pct) {
      if (!(f >= 0.0 && f <= 100.0)) fail("[moe] fractions", "values must be in [0, 100]");
    }
    if (moe.tiers.empty()) fail("[moe] tiers", "at least one tier is required");
    for (Tier t : moe.tiers) {
      if (t == Tier::LocalHBM) fail("[moe] tiers", "offload tier must be peer or host");
      if (t == Tier::PeerHBM && peers == 0) fail("[moe] tiers", "peer tier needs [topology] peers >= 1");
    }
    if (!(moe.speedup_fraction_pct >= 0.0 && moe.speedup_fraction_pct <= 100.0)) {
      fail("[moe] speedup_fraction", "must be in [0, 100]");
    }
    if (!(moe.routing.skew >= 0.0)) fail("[moe] skew", "must be >= 0");
    if (moe.routing.drift_period < 0) fail("[moe] drift_period", "must be >= 0");
    if (moe.pipeline.microbatch_tokens < 1) fail("[moe] microbatch_tokens", "must be >= 1");
    if (moe.pipeline.num_microbatches < 1) fail("[moe] num_microbatches", "must be >= 1");
    if (moe.pipeline.decode_steps < 1) fail("[moe] decode_steps", "must be >= 1");
  }
  if (wants_kv) {
    if (kv.models.empty()) fail("[kv] models", "at least one model is required");
    for (const auto& m : kv.models) convert("[kv] models", [&] { return kv_profile(m); });
    if (kv.entries.empty()) fail("[kv] entries", "at least one entry count is required");
    for (int n : kv.entries) {
      if (n < 1) fail("[kv] entries", "values must be >= 1");
    }
    if (kv.workload.sequences < 1) fail("[kv] sequences", "must be >= 1");
    if (kv.workload.prompt_tokens < 1) fail("[kv] prompt_tokens", "must be >= 1");
    if (kv.workload.decode_steps < 0) fail("[kv] decode_steps", "must be >= 0");
    if (!(kv.offload.local_watermark > 0.0 && kv.offload.local_watermark <= 1.0)) {
      fail("[kv] local_watermark", "must be in (0, 1]");
    }
    if (kv.block_size < 1) fail("[kv] block_size", "must be >= 1");
  }

  const auto& a = availability;
  switch (a.source) {
    case AvailabilitySource::None:
      break;
    case AvailabilitySource::Markov:
      if (a.levels_pct.empty()) fail("[availability] levels_pct", "at least one level is required");
      for (double l : a.levels_pct) {
        if (!(l >= 0.0 && l <= 100.0)) fail("[availability] levels_pct", "values must be in [0, 100]");
      }
      if (a.mean_sojourn_s.size() != a.levels_pct.size()) {
        fail("[availability] mean_sojourn_s", "needs one value per level");
      }
      for (double m : a.mean_sojourn_s) {
        if (!(m > 0.0)) fail("[availability] mean_sojourn_s", "values must be > 0");
      }
      if (!(a.horizon_s > 0.0)) fail("[availability] horizon_s", "must be > 0");
      break;
    case AvailabilitySource::Trace:
      if (a.trace.empty()) fail("[availability] trace", "required for source = trace");
      if (!fs::exists(a.trace)) fail("[availability] trace", "'" + a.trace.string() + "' not found");
      if (a.machine.empty()) fail("[availability] machine", "required for source = trace");
      if (!(a.time_scale > 0.0)) fail("[availability] time_scale", "must be > 0");
      break;
  }
  if (a.source != AvailabilitySource::None) {
    if (peers == 0) fail("[availability] source", "needs [topology] peers >= 1");
    if (!(a.moe_fraction_pct >= 0.0 && a.moe_fraction_pct <= 100.0)) {
      fail("[availability] moe_fraction", "must be in [0, 100]");
    }
  }
}

// ---------------------------------------------------------------------------
// Running

namespace {

class Table {
 public:
  explicit Table(std::string header) { out_ << header << '\n'; }
  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << '\n';
  }
  std::string str() const { return out_.str(); }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(std::string_view v) { return std::string(v); }
  static std::string cell(const char* v) { return v; }
  template <typename T>
  static std::string cell(T v) requires std::is_integral_v<T> { return std::to_string(v); }
  std::ostringstream out_;
};

// Insertion-ordered metric samples across seeds.
class Summary {
 public:
  void add(const std::string& experiment, const std::string& key, const std::string& metric,
           double value) {
    const auto id = std::make_tuple(experiment, key, metric);
    auto [it, inserted] = index_.try_emplace(id, rows_.size());
    if (inserted) rows_.push_back({id, {}});
    rows_[it->second].second.push_back(value);
  }
  std::string str() const {
    Table t("experiment,key,metric,mean,min,max,seeds");
    for (const auto& [id, values] : rows_) {
      double sum = 0.0;
      for (double v : values) sum += v;
      const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
      t.row(std::get<0>(id), std::get<1>(id), std::get<2>(id),
            sum / static_cast<double>(values.size()), *lo, *hi, values.size());
    }
    return t.str();
  }

 private:
  using Id = std::tuple<std::string, std::string, std::string>;
  std::map<Id, std::size_t> index_;
  std::vector<std::pair<Id, std::vector<double>>> rows_;
};

TopologyConfig apply_topology(const Scenario& s, TopologyConfig cfg) {
  for (auto& p : cfg.peers) {
    if (s.peer_capacity > 0) p.capacity = s.peer_capacity;
    p.reserved = s.reserved;
    p.headroom = s.headroom;
  }
  return cfg;
}

std::vector<AvailabilityTimeline> build_timelines(const Scenario& s, const TopologyConfig& topo,
                                                  std::uint64_t seed,
                                                  const std::vector<SnapshotRecord>& trace) {
  std::vector<AvailabilityTimeline> out;
  for (std::size_t i = 0; i < topo.peers.size(); ++i) {
    const DeviceSpec& peer = topo.peers[i];
    if (s.availability.source == AvailabilitySource::Trace) {
      out.push_back(availability_from_trace(trace, s.availability.machine, peer,
                                            s.availability.time_scale));
      continue;
    }
    std::vector<Bytes> levels;
    for (double pct : s.availability.levels_pct) {
      levels.push_back(static_cast<Bytes>(static_cast<double>(peer.usable()) * pct / 100.0));
    }
    out.push_back(markov_availability(levels, s.availability.mean_sojourn_s,
                                      s.availability.horizon_s, hash_values(seed, i)));
  }
  return out;
}

struct ChurnOutcome {
  double elapsed_s = 0.0;
  std::size_t revoked_handles = 0;
  Bytes revoked_bytes = 0;
  std::uint64_t fallbacks = 0;
  bool digest_match = false;
};

void check_log(const Scenario& s, EventLog& log, const std::string& context) {
  if (s.inject_log_fault) {
    LogRecord bogus;
    bogus.kind = EventKind::Callback;
    bogus.issuer = Issuer::Runtime;
    bogus.generation = 0;
    bogus.time = log.records().empty() ? 0 : log.records().back().time;
    log.append(bogus);
  }
  require_log_invariants(log, context);
}

std::vector<std::unique_ptr<AvailabilityDriver>> start_drivers(
    HarvestRuntime& runtime, const std::vector<AvailabilityTimeline>& timelines) {
  std::vector<std::unique_ptr<AvailabilityDriver>> drivers;
  const auto peers = runtime.peer_ids();
  for (std::size_t i = 0; i < peers.size() && i < timelines.size(); ++i) {
    drivers.push_back(std::make_unique<AvailabilityDriver>(runtime, peers[i], timelines[i]));
    drivers.back()->start();
  }
  return drivers;
}

void tally(ChurnOutcome& out, const std::vector<std::unique_ptr<AvailabilityDriver>>& drivers) {
  for (const auto& d : drivers) {
    out.revoked_handles += d->revoked_handles();
    out.revoked_bytes += d->revoked_bytes();
  }
}

ChurnOutcome moe_churn(const Scenario& s, const MoEModelSpec& model, const TopologyConfig& topo,
                       const RoutingTrace& trace, const std::vector<AvailabilityTimeline>& timelines,
                       const std::string& context) {
  const double fraction = s.availability.moe_fraction_pct / 100.0;
  TopologyConfig no_peers = topo;
  no_peers.peers.clear();
  no_peers.peer_hops.clear();
  MoEDecodeSim baseline(model, s.moe.pipeline, no_peers, s.policy);
  baseline.sim().log().set_enabled(false);
  baseline.place_offload(trace, fraction, Tier::HostDRAM);
  const auto base = baseline.run(trace);

  MoEDecodeSim sim(model, s.moe.pipeline, topo, s.policy);
  sim.place_offload(trace, fraction, Tier::PeerHBM);
  auto drivers = start_drivers(sim.runtime(), timelines);
  const auto m = sim.run(trace);
  sim.sim().run();

  if (auto err = sim.runtime().check_invariants(); !err.empty()) {
    throw InvariantViolation(context + ": " + err, "");
  }
  check_log(s, sim.sim().log(), context);

  ChurnOutcome out;
  out.elapsed_s = m.elapsed_s;
  out.fallbacks = m.fallback_fetches;
  out.digest_match = m.digest == base.digest;
  tally(out, drivers);
  return out;
}

ChurnOutcome kv_churn(const Scenario& s, const KVModelSpec& model, const TopologyConfig& topo,
                      const std::vector<AvailabilityTimeline>& timelines,
                      const std::string& context) {
  TopologyConfig no_peers = topo;
  no_peers.peers.clear();
  no_peers.peer_hops.clear();
  KVCacheSim baseline(model, no_peers, s.kv.offload, s.policy, s.kv.block_size);
  baseline.sim().log().set_enabled(false);
  const auto base = run_kv_workload(baseline, s.kv.workload);

  KVCacheSim cache(model, topo, s.kv.offload, s.policy, s.kv.block_size);
  auto drivers = start_drivers(cache.runtime(), timelines);
  const auto r = run_kv_workload(cache, s.kv.workload);
  cache.sim().run();

  if (auto err = cache.check_invariants(); !err.empty()) {
    throw InvariantViolation(context + ": " + err, "");
  }
  if (auto err = cache.runtime().check_invariants(); !err.empty()) {
    throw InvariantViolation(context + ": " + err, "");
  }
  check_log(s, cache.sim().log(), context);

  ChurnOutcome out;
  out.elapsed_s = r.elapsed_s;
  out.fallbacks = r.stats.peer_misses + r.stats.recomputes;
  out.digest_match = r.digest == base.digest;
  tally(out, drivers);
  return out;
}

}  // namespace

std::vector<fs::path> run_scenario(const Scenario& s, const fs::path& out) {
  s.validate();
  fs::create_directories(out);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& file, const std::string& content) {
    write_file_atomic(out / file, content);
    written.push_back(out / file);
  };

  const CalibrationProfile& cal = calibration_profile(s.profile);
  const TopologyConfig expert_topo = apply_topology(s, cal.expert_topology(s.peers));
  TopologyConfig kv_topo = apply_topology(s, cal.kv_topology(s.peers));
  if (s.kv.local_capacity > 0) kv_topo.local_capacity = s.kv.local_capacity;

  const bool wants_moe = s.workload != WorkloadKind::KV;
  const bool wants_kv = s.workload != WorkloadKind::MoE;
  const bool has_peer = std::count(s.moe.tiers.begin(), s.moe.tiers.end(), Tier::PeerHBM) > 0;
  const bool has_host = std::count(s.moe.tiers.begin(), s.moe.tiers.end(), Tier::HostDRAM) > 0;

  std::vector<SnapshotRecord> trace_records;
  if (s.availability.source == AvailabilitySource::Trace) {
    std::ifstream in(s.availability.trace);
    if (!in) throw ConfigError("[availability] trace: cannot read '" + s.availability.trace.string() + "'");
    try {
      trace_records = parse_snapshots(in, s.availability.parse_mode).records;
    } catch (const TraceError& e) {
      throw ConfigError(std::string("[availability] trace: ") + e.what());
    }
  }

  Summary summary;
  for (std::uint64_t seed : s.seeds) {
    const std::string tag = "seed" + std::to_string(seed);

    std::map<std::string, RoutingTrace> traces;
    if (wants_moe) {
      Table speedups("model,fraction_pct,peer_tokens_per_s,host_tokens_per_s,speedup");
      for (const auto& name : s.moe.models) {
        const MoEModelSpec& model = moe_profile(name);
        const auto& trace = traces[name] = generate_routing(model, s.moe.pipeline, s.moe.routing, seed);
        Table sweep("fraction_pct,tier,tokens_per_s,stall_s");
        for (Tier tier : s.moe.tiers) {
          for (const auto& row : offload_sweep(model, s.moe.pipeline, expert_topo,
                                               s.moe.fractions_pct, tier, trace)) {
            sweep.row(row.fraction_pct, to_string(row.tier), row.tokens_per_s, row.stall_s);
            const std::string key = name + "/" + std::string(to_string(tier)) + "/" +
                                    format_double(row.fraction_pct);
            summary.add("moe_sweep", key, "tokens_per_s", row.tokens_per_s);
            summary.add("moe_sweep", key, "stall_s", row.stall_s);
          }
        }
        emit("moe_sweep_" + name + "_" + tag + ".csv", sweep.str());
        if (has_peer && has_host) {
          const double f[] = {s.moe.speedup_fraction_pct};
          const auto peer = offload_sweep(model, s.moe.pipeline, expert_topo, f, Tier::PeerHBM, trace);
          const auto host = offload_sweep(model, s.moe.pipeline, expert_topo, f, Tier::HostDRAM, trace);
          const double speedup = peer.front().tokens_per_s / host.front().tokens_per_s;
          speedups.row(name, f[0], peer.front().tokens_per_s, host.front().tokens_per_s, speedup);
          summary.add("moe_speedup", name, "speedup", speedup);
        }
      }
      if (has_peer && has_host) emit("moe_speedup_" + tag + ".csv", speedups.str());
    }

    if (wants_kv) {
      std::vector<KVModelSpec> models;
      for (const auto& name : s.kv.models) models.push_back(kv_profile(name));
      Table reload("model,entries,host_s,peer_s,speedup");
      for (const auto& row : reload_latency_experiment(models, s.kv.entries, cal.kv_links.peer,
                                                       cal.kv_links.host)) {
        reload.row(row.model, row.entries, row.host_s, row.peer_s, row.speedup);
        summary.add("kv_reload", row.model + "/" + std::to_string(row.entries), "speedup",
                    row.speedup);
      }
      emit("kv_reload_" + tag + ".csv", reload.str());
    }

    if (s.availability.source != AvailabilitySource::None) {
      Table churn("workload,model,elapsed_s,revoked_handles,revoked_bytes,fallbacks,digest_match");
      if (wants_moe) {
        const auto timelines = build_timelines(s, expert_topo, seed, trace_records);
        for (const auto& name : s.moe.models) {
          const auto c = moe_churn(s, moe_profile(name), expert_topo, traces.at(name), timelines,
                                   "moe churn " + name + " " + tag);
          churn.row("moe", name, c.elapsed_s, c.revoked_handles, c.revoked_bytes, c.fallbacks,
                    c.digest_match ? 1 : 0);
          summary.add("churn", "moe/" + name, "elapsed_s", c.elapsed_s);
          summary.add("churn", "moe/" + name, "digest_match", c.digest_match ? 1.0 : 0.0);
        }
      }
      if (wants_kv) {
        const auto timelines = build_timelines(s, kv_topo, seed, trace_records);
        for (const auto& name : s.kv.models) {
          const auto c = kv_churn(s, kv_profile(name), kv_topo, timelines,
                                  "kv churn " + name + " " + tag);
          churn.row("kv", name, c.elapsed_s, c.revoked_handles, c.revoked_bytes, c.fallbacks,
                    c.digest_match ? 1 : 0);
          summary.add("churn", "kv/" + name, "elapsed_s", c.elapsed_s);
          summary.add("churn", "kv/" + name, "digest_match", c.digest_match ? 1.0 : 0.0);
        }
      }
      emit("churn_" + tag + ".csv", churn.str());
    }
  }
  emit("summary.csv", summary.str());
  return written;
}

}  // namespace harvest
