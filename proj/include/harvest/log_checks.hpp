// Copyright 2026 The Harvest Sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "harvest/sim.hpp"

namespace harvest {

/// A broken ordering rule, located by index into EventLog::records().
struct Violation {
  std::size_t index = 0;
  std::string message;
};

/// No transfer issued before a region's free completes after that free.
std::optional<Violation> check_drain_before_free(const EventLog& log);

/// Every revocation runs invalidate < callback < free in strictly
/// increasing time, and no callback fires without a prior invalidation.
std::optional<Violation> check_revocation_order(const EventLog& log);

/// The runtime itself never issues a transfer (so never writes back).
std::optional<Violation> check_no_runtime_transfers(const EventLog& log);

/// Every fetch issued for a pipeline stage completes before the stage starts.
std::optional<Violation> check_stage_residency(const EventLog& log);

/// All of the above; the first violation found.
std::optional<Violation> check_all(const EventLog& log);

class InvariantViolation : public HarvestError {
 public:
  InvariantViolation(const std::string& message, std::string excerpt)
      : HarvestError(message), excerpt_(std::move(excerpt)) {}
  const std::string& excerpt() const { return excerpt_; }

 private:
  std::string excerpt_;
};

/// Runs check_all and throws InvariantViolation carrying the log lines
/// around the offending record.
void require_log_invariants(const EventLog& log, const std::string& context);

}  // namespace harvest
