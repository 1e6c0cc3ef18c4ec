# Copyright 2026 The Harvest Sim Authors
# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the Harvest peer-GPU caching simulator."""

from ._core import (
    ConfigError,
    HarvestError,
    InvariantViolation,
    TraceError,
    calibrate,
    calibrate_file,
    calibration_profile_names,
    cdf_from_file,
    kv_profile_names,
    moe_profile_names,
    offload_sweep,
    peer_vs_host_speedup,
    reload_experiment,
    resolve_fallback,
    run_kv_workload,
    run_scenario,
    transfer_time,
)

__all__ = [
    "ConfigError",
    "HarvestError",
    "InvariantViolation",
    "TraceError",
    "calibrate",
    "calibrate_file",
    "calibration_profile_names",
    "cdf_from_file",
    "kv_profile_names",
    "moe_profile_names",
    "offload_sweep",
    "peer_vs_host_speedup",
    "reload_experiment",
    "resolve_fallback",
    "run_kv_workload",
    "run_scenario",
    "transfer_time",
]
