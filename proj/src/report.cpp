// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "harvest/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "harvest/scenario.hpp"

namespace harvest {

namespace fs = std::filesystem;

namespace {

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool is_number(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

// Reads a table whose header must equal `expected`; the listed columns
// must hold numbers. Returns an error message or an empty string.
std::string read_csv(const fs::path& path, const std::string& expected,
                     const std::vector<std::size_t>& numeric, Csv& csv) {
  std::ifstream in(path);
  if (!in) return "cannot read";
  std::string line;
  if (!std::getline(in, line) || line != expected) return "unexpected header";
  csv.header = split_row(line);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto row = split_row(line);
    if (row.size() != csv.header.size()) {
      return "line " + std::to_string(line_no) + ": expected " +
             std::to_string(csv.header.size()) + " fields";
    }
    for (std::size_t c : numeric) {
      if (!is_number(row[c])) return "line " + std::to_string(line_no) + ": bad number";
    }
    csv.rows.push_back(std::move(row));
  }
  if (csv.rows.empty()) return "no rows";
  return {};
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void print_table(std::ostream& out, const std::string& title,
                 const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string text;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) text += "  ";
      text += std::string(width[c] - cells[c].size(), ' ') + cells[c];
    }
    out << text << '\n';
  };
  out << "== " << title << " ==\n";
  line(header);
  for (const auto& r : rows) line(r);
  out << '\n';
}

// Mean of numeric cells across seeds, grouped by key columns in first-seen
// order.
struct Grouped {
  std::vector<std::vector<std::string>> keys;
  std::map<std::vector<std::string>, std::pair<std::vector<double>, int>> sums;

  void add(const std::vector<std::string>& key, const std::vector<double>& values) {
    auto [it, inserted] = sums.try_emplace(key, std::vector<double>(values.size(), 0.0), 0);
    if (inserted) keys.push_back(key);
    for (std::size_t i = 0; i < values.size(); ++i) it->second.first[i] += values[i];
    ++it->second.second;
  }
  std::vector<double> mean(const std::vector<std::string>& key) const {
    const auto& [sum, n] = sums.at(key);
    std::vector<double> out;
    for (double v : sum) out.push_back(v / n);
    return out;
  }
};

double num(const std::string& s) {
  double v = 0.0;
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

}  // namespace

int write_report(const fs::path& dir, std::ostream& out, std::ostream& warn) {
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
  } else {
    warn << "warning: " << dir.string() << " is not a directory\n";
  }
  std::sort(files.begin(), files.end());

  static const std::regex kSweep(R"(moe_sweep_(.+)_seed(\d+)\.csv)");
  static const std::regex kSpeedup(R"(moe_speedup_seed(\d+)\.csv)");
  static const std::regex kReload(R"(kv_reload_seed(\d+)\.csv)");
  static const std::regex kChurn(R"(churn_seed(\d+)\.csv)");

  std::map<std::string, std::pair<Grouped, int>> sweeps;  // by model
  Grouped speedup;
  Grouped reload;
  Grouped churn;
  int speedup_files = 0;
  int reload_files = 0;
  int churn_files = 0;

  for (const auto& path : files) {
    const std::string name = path.filename().string();
    std::smatch m;
    Csv csv;
    std::string err;
    if (std::regex_match(name, m, kSweep)) {
      err = read_csv(path, "fraction_pct,tier,tokens_per_s,stall_s", {0, 2, 3}, csv);
      if (err.empty()) {
        auto& [g, n] = sweeps[m[1].str()];
        for (const auto& r : csv.rows) g.add({r[0], r[1]}, {num(r[2]), num(r[3])});
        ++n;
      }
    } else if (std::regex_match(name, kSpeedup)) {
      err = read_csv(path, "model,fraction_pct,peer_tokens_per_s,host_tokens_per_s,speedup",
                     {1, 2, 3, 4}, csv);
      if (err.empty()) {
        for (const auto& r : csv.rows) {
          speedup.add({r[0], r[1]}, {num(r[2]), num(r[3]), num(r[4])});
        }
        ++speedup_files;
      }
    } else if (std::regex_match(name, kReload)) {
      err = read_csv(path, "model,entries,host_s,peer_s,speedup", {1, 2, 3, 4}, csv);
      if (err.empty()) {
        for (const auto& r : csv.rows) reload.add({r[0], r[1]}, {num(r[2]), num(r[3]), num(r[4])});
        ++reload_files;
      }
    } else if (std::regex_match(name, kChurn)) {
      err = read_csv(path,
                     "workload,model,elapsed_s,revoked_handles,revoked_bytes,fallbacks,digest_match",
                     {2, 3, 4, 5, 6}, csv);
      if (err.empty()) {
        for (const auto& r : csv.rows) {
          churn.add({r[0], r[1]}, {num(r[2]), num(r[3]), num(r[5]), num(r[6])});
        }
        ++churn_files;
      }
    } else {
      continue;
    }
    if (!err.empty()) warn << "warning: skipping " << name << ": " << err << '\n';
  }

  int sections = 0;
  if (speedup_files > 0) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& k : speedup.keys) {
      const auto v = speedup.mean(k);
      rows.push_back({k[0], k[1], fixed(v[0], 1), fixed(v[1], 1), fixed(v[2], 3)});
    }
    print_table(out, "MoE peer vs host speedup (" + std::to_string(speedup_files) + " seeds)",
                {"model", "offload_%", "peer_tok/s", "host_tok/s", "speedup"}, rows);
    ++sections;
  }
  for (const auto& [model, entry] : sweeps) {
    const auto& [g, n] = entry;
    std::vector<std::vector<std::string>> rows;
    for (const auto& k : g.keys) {
      const auto v = g.mean(k);
      rows.push_back({k[0], k[1], fixed(v[0], 1), fixed(v[1], 4)});
    }
    print_table(out, "MoE offload sweep: " + model + " (" + std::to_string(n) + " seeds)",
                {"offload_%", "tier", "tokens/s", "stall_s"}, rows);
    ++sections;
  }
  if (reload_files > 0) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& k : reload.keys) {
      const auto v = reload.mean(k);
      rows.push_back({k[0], k[1], fixed(v[0] * 1e3, 4), fixed(v[1] * 1e3, 4), fixed(v[2], 3)});
    }
    print_table(out, "KV reload latency", {"model", "entries", "host_ms", "peer_ms", "speedup"},
                rows);
    ++sections;
  }
  if (churn_files > 0) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& k : churn.keys) {
      const auto v = churn.mean(k);
      rows.push_back({k[0], k[1], fixed(v[0], 4), fixed(v[1], 1), fixed(v[2], 1), fixed(v[3], 2)});
    }
    print_table(out, "Revocation churn (" + std::to_string(churn_files) + " seeds)",
                {"workload", "model", "elapsed_s", "revoked", "fallbacks", "digest_match"}, rows);
    ++sections;
  }
  if (sections == 0) out << "no metrics found\n";
  return sections;
}

}  // namespace harvest
