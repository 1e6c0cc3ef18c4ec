// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "harvest/interconnect.hpp"
#include "harvest/log_checks.hpp"
#include "harvest/report.hpp"
#include "harvest/scenario.hpp"
#include "harvest/traces.hpp"

namespace fs = std::filesystem;
using namespace harvest;

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInvariant = 3;

struct RunArgs {
  std::string scenario;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::string profile;
};

int cmd_run(const RunArgs& args) {
  Scenario s = load_scenario(args.scenario);
  if (!args.seeds.empty()) s.seeds = args.seeds;
  if (!args.profile.empty()) s.profile = args.profile;
  s.validate();
  fs::path out = !args.out.empty() ? fs::path(args.out) : s.output;
  if (out.empty()) out = "out";
  const auto files = run_scenario(s, out);
  for (const auto& f : files) std::cout << "wrote " << f.string() << '\n';
  return 0;
}

struct CalibrateArgs {
  std::string points;
  std::string link;
  std::string out;
};

int cmd_calibrate(const CalibrateArgs& args) {
  std::ifstream in(args.points);
  if (!in) throw ConfigError("calibrate: cannot read '" + args.points + "'");
  const auto points = parse_calibration_points(in);
  const LinkFit fit = calibrate(points);
  std::ostringstream fragment;
  fragment.precision(17);
  fragment << "[link." << args.link << "]\n"
           << "fixed_cost = " << fit.fixed_cost << '\n'
           << "bandwidth = " << fit.bandwidth << '\n'
           << "rms_relative_error = " << fit.rms_relative_error << '\n';
  std::cout.precision(17);
  std::cout << "fixed_cost " << fit.fixed_cost << '\n'
            << "bandwidth " << fit.bandwidth << '\n'
            << "rms_relative_error " << fit.rms_relative_error << '\n';
  if (!args.out.empty()) {
    fs::create_directories(args.out);
    const fs::path path = fs::path(args.out) / ("link_" + args.link + ".ini");
    write_file_atomic(path, fragment.str());
    std::cout << "wrote " << path.string() << '\n';
  } else {
    std::cout << fragment.str();
  }
  return 0;
}

struct CdfArgs {
  std::string trace;
  std::string out;
  std::string aggregation = "mean";
  int resolution = 100;
  bool lenient = false;
};

int cmd_cdf(const CdfArgs& args) {
  std::ifstream in(args.trace);
  if (!in) throw ConfigError("cdf: cannot read '" + args.trace + "'");
  const auto parsed = parse_snapshots(in, args.lenient ? ParseMode::Lenient : ParseMode::Strict);
  for (const auto& e : parsed.errors) std::cerr << "warning: " << e << '\n';
  const auto cdf = compute_cdf(parsed.records, args.resolution, parse_aggregation(args.aggregation));
  std::cout << "records " << parsed.records.size() << '\n'
            << "rejected " << parsed.rejected << '\n'
            << "machines " << cdf.samples.size() << '\n'
            << "CDF(0.20) " << format_double(cdf.at(0.20)) << '\n'
            << "CDF(0.50) " << format_double(cdf.at(0.50)) << '\n';
  if (!args.out.empty()) {
    fs::create_directories(args.out);
    std::ostringstream body;
    write_cdf(body, cdf);
    const fs::path path = fs::path(args.out) / "cdf.csv";
    write_file_atomic(path, body.str());
    std::cout << "wrote " << path.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Opportunistic peer-GPU memory harvesting simulator"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run a scenario and write metrics tables");
  run->add_option("--scenario", run_args.scenario, "Scenario file")->required();
  run->add_option("--out", run_args.out, "Output directory");
  run->add_option("--seed", run_args.seeds, "Seed (repeatable; overrides the scenario)")
      ->take_all()
      ->expected(1);
  run->add_option("--profile", run_args.profile, "Calibration profile (overrides the scenario)");

  CalibrateArgs cal_args;
  auto* cal = app.add_subcommand("calibrate", "Fit an affine link model to latency points");
  cal->add_option("points", cal_args.points, "size_bytes,latency_seconds file")->required();
  cal->add_option("--link", cal_args.link, "Link name for the profile fragment")->required();
  cal->add_option("--out", cal_args.out, "Directory for the profile fragment");

  CdfArgs cdf_args;
  auto* cdf = app.add_subcommand("cdf", "Utilization CDF of a snapshot trace");
  cdf->add_option("trace", cdf_args.trace, "machine_id,timestamp,used,capacity file")->required();
  cdf->add_option("--out", cdf_args.out, "Directory for cdf.csv");
  cdf->add_option("--aggregation", cdf_args.aggregation, "mean, max or per_snapshot");
  cdf->add_option("--resolution", cdf_args.resolution, "CDF grid points - 1");
  cdf->add_flag("--lenient,!--strict", cdf_args.lenient, "Skip malformed rows (default strict)");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize a metrics directory");
  report->add_option("dir", report_dir, "Metrics directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*cal) return cmd_calibrate(cal_args);
    if (*cdf) return cmd_cdf(cdf_args);
    if (*report) {
      write_report(report_dir, std::cout, std::cerr);
      return 0;
    }
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << '\n'
              << "event log excerpt:\n"
              << e.excerpt();
    return kExitInvariant;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CalibrationError& e) {
    std::cerr << "calibration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TraceError& e) {
    std::cerr << "trace error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidSpec& e) {
    std::cerr << "invalid spec: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
