// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>

namespace harvest {

/// Prints aligned per-experiment tables for the metrics in `dir`, averaging
/// over seeds. Unreadable tables are skipped with a warning on `warn`.
/// Returns the number of sections printed.
int write_report(const std::filesystem::path& dir, std::ostream& out, std::ostream& warn);

}  // namespace harvest
