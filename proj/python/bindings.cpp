// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

#include "harvest/interconnect.hpp"
#include "harvest/kv_sim.hpp"
#include "harvest/log_checks.hpp"
#include "harvest/moe_sim.hpp"
#include "harvest/profiles.hpp"
#include "harvest/scenario.hpp"
#include "harvest/traces.hpp"

namespace py = pybind11;
using namespace harvest;

namespace {

Tier parse_tier(const std::string& text) {
  if (text == "peer") return Tier::PeerHBM;
  if (text == "host") return Tier::HostDRAM;
  throw ConfigError("unknown tier '" + text + "' (expected peer or host)");
}

Durability parse_durability(const std::string& text) {
  if (text == "lossy") return Durability::Lossy;
  if (text == "backed") return Durability::Backed;
  throw ConfigError("unknown durability '" + text + "' (expected lossy or backed)");
}

py::dict fit_dict(const LinkFit& fit) {
  py::dict d;
  d["fixed_cost"] = fit.fixed_cost;
  d["bandwidth"] = fit.bandwidth;
  d["rms_relative_error"] = fit.rms_relative_error;
  return d;
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return in;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Harvest peer-GPU caching simulator";

  auto base = py::register_exception<HarvestError>(m, "HarvestError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<TraceError>(m, "TraceError", base.ptr());
  py::register_exception<InvariantViolation>(m, "InvariantViolation", base.ptr());

  m.def("calibration_profile_names", &calibration_profile_names);
  m.def("moe_profile_names", &moe_profile_names);
  m.def("kv_profile_names", &kv_profile_names);

  m.def(
      "transfer_time",
      [](double fixed_cost, double bandwidth, Bytes size) {
        return transfer_time(LinkParams{fixed_cost, bandwidth}, size);
      },
      py::arg("fixed_cost"), py::arg("bandwidth"), py::arg("size"));

  m.def(
      "calibrate",
      [](const std::vector<std::pair<double, double>>& points) {
        std::vector<CalibrationPoint> pts;
        for (const auto& [size, latency] : points) pts.push_back({size, latency});
        return fit_dict(calibrate(pts));
      },
      py::arg("points"), "Fits latency = a + size / B to (size, latency) pairs.");

  m.def(
      "calibrate_file",
      [](const std::filesystem::path& path) {
        auto in = open(path);
        return fit_dict(calibrate(parse_calibration_points(in)));
      },
      py::arg("path"));

  m.def(
      "cdf_from_file",
      [](const std::filesystem::path& path, int resolution, const std::string& aggregation,
         bool lenient) {
        auto in = open(path);
        const auto parsed = parse_snapshots(in, lenient ? ParseMode::Lenient : ParseMode::Strict);
        const auto cdf = compute_cdf(parsed.records, resolution, parse_aggregation(aggregation));
        std::vector<std::pair<double, double>> out;
        for (const auto& p : cdf.points) out.emplace_back(p.utilization, p.cumulative);
        return out;
      },
      py::arg("path"), py::arg("resolution") = 100, py::arg("aggregation") = "mean",
      py::arg("lenient") = false, "Returns (utilization, cumulative_fraction) pairs.");

  m.def(
      "offload_sweep",
      [](const std::string& model, const std::vector<double>& fractions_pct,
         const std::string& tier, std::uint64_t seed, const std::string& profile) {
        const auto rows = offload_sweep(moe_profile(model), PipelineConfig{},
                                        calibration_profile(profile).expert_topology(),
                                        fractions_pct, parse_tier(tier), RoutingConfig{}, seed);
        std::vector<py::dict> out;
        for (const auto& r : rows) {
          py::dict d;
          d["fraction_pct"] = r.fraction_pct;
          d["tokens_per_s"] = r.tokens_per_s;
          d["stall_s"] = r.stall_s;
          out.push_back(d);
        }
        return out;
      },
      py::arg("model"), py::arg("fractions_pct"), py::arg("tier"), py::arg("seed") = 1,
      py::arg("profile") = "paper-h100");

  m.def(
      "peer_vs_host_speedup",
      [](const std::string& model, double fraction_pct, std::uint64_t seed,
         const std::string& profile) {
        const auto& spec = moe_profile(model);
        const PipelineConfig pipeline;
        const auto trace = generate_routing(spec, pipeline, RoutingConfig{}, seed);
        return peer_vs_host_speedup(spec, pipeline, calibration_profile(profile).expert_topology(),
                                    fraction_pct, trace);
      },
      py::arg("model"), py::arg("fraction_pct") = 50.0, py::arg("seed") = 1,
      py::arg("profile") = "paper-h100");

  m.def(
      "reload_experiment",
      [](const std::vector<std::string>& models, const std::vector<int>& entries,
         const std::string& profile) {
        std::vector<KVModelSpec> specs;
        for (const auto& name : models) specs.push_back(kv_profile(name));
        const auto& cal = calibration_profile(profile);
        std::vector<py::dict> out;
        for (const auto& r :
             reload_latency_experiment(specs, entries, cal.kv_links.peer, cal.kv_links.host)) {
          py::dict d;
          d["model"] = r.model;
          d["entries"] = r.entries;
          d["host_s"] = r.host_s;
          d["peer_s"] = r.peer_s;
          d["speedup"] = r.speedup;
          out.push_back(d);
        }
        return out;
      },
      py::arg("models"),
      py::arg("entries") = std::vector<int>(std::begin(kDefaultReloadEntries),
                                            std::end(kDefaultReloadEntries)),
      py::arg("profile") = "paper-h100");

  m.def(
      "resolve_fallback",
      [](const std::string& model, int entries, bool has_host_copy, const std::string& profile) {
        KVBlock block;
        block.entries = entries;
        block.durability = has_host_copy ? Durability::Backed : Durability::Lossy;
        return std::string(to_string(resolve_fallback(block, has_host_copy, kv_profile(model),
                                                      calibration_profile(profile).kv_links.host)));
      },
      py::arg("model"), py::arg("entries"), py::arg("has_host_copy") = true,
      py::arg("profile") = "paper-h100");

  m.def(
      "run_kv_workload",
      [](const std::string& model, int sequences, int prompt_tokens, int decode_steps,
         const std::string& durability, int peers, Bytes local_capacity,
         const std::string& profile) {
        auto topo = calibration_profile(profile).kv_topology(peers);
        if (local_capacity > 0) topo.local_capacity = local_capacity;
        KVCacheSim cache(kv_profile(model), topo);
        KVWorkload w;
        w.sequences = sequences;
        w.prompt_tokens = prompt_tokens;
        w.decode_steps = decode_steps;
        w.durability = parse_durability(durability);
        const auto r = run_kv_workload(cache, w);
        require_log_invariants(cache.sim().log(), "kv workload");
        py::dict d;
        d["digest"] = r.digest;
        d["elapsed_s"] = r.elapsed_s;
        d["evictions_to_peer"] = r.stats.evictions_to_peer;
        d["evictions_to_host"] = r.stats.evictions_to_host;
        d["reloads_from_peer"] = r.stats.reloads_from_peer;
        d["reloads_from_host"] = r.stats.reloads_from_host;
        d["recomputes"] = r.stats.recomputes;
        return d;
      },
      py::arg("model"), py::arg("sequences") = 4, py::arg("prompt_tokens") = 48,
      py::arg("decode_steps") = 8, py::arg("durability") = "lossy", py::arg("peers") = 1,
      py::arg("local_capacity") = 0, py::arg("profile") = "paper-h100");

  m.def(
      "run_scenario",
      [](const std::filesystem::path& scenario, const std::filesystem::path& out) {
        return run_scenario(load_scenario(scenario), out);
      },
      py::arg("scenario"), py::arg("out"), "Runs a scenario file; returns the files written.");
}
