#!/usr/bin/env python3
# Copyright 2026 The Harvest Sim Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the trace and calibration fixtures under data/.

Expected values are computed here, independently of the C++ code.
"""

import argparse
import math
import random
from pathlib import Path

GIB = 1024**3
HEADER = "machine_id,timestamp,used,capacity"


def write(path: Path, lines):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def hand_fixture(root: Path):
    # 10 machines, 2 snapshots each; utilizations are multiples of 1/16 so
    # every mean is exact in binary floating point.
    cap = 16 * GIB
    sixteenths = [
        (0, 2), (1, 1), (2, 4), (3, 3), (1, 7),
        (8, 8), (5, 11), (12, 14), (15, 13), (16, 16),
    ]
    rows = [HEADER]
    means = []
    for i, (a, b) in enumerate(sixteenths):
        mid = f"m{i:02d}"
        rows.append(f"{mid},0,{a * GIB},{cap}")
        rows.append(f"{mid},60,{b * GIB},{cap}")
        means.append(((a / 16) + (b / 16)) / 2)
    write(root / "traces" / "hand_20.csv", rows)

    expected = ["utilization,cumulative_fraction"]
    for i in range(101):
        u = i / 100
        below = sum(1 for m in means if m <= u)
        expected.append(f"{u!r},{below / len(means)!r}")
    write(root / "traces" / "hand_20_expected.csv", expected)


def synthetic_population(root: Path, seed: int):
    # 1000 machines stratified so that 68% have mean utilization <= 0.20 and
    # 87% have mean utilization <= 0.50. Each machine has 4 snapshots an hour
    # apart whose mean sits inside its stratum.
    rng = random.Random(seed)
    cap = 80 * GIB
    strata = [(680, 0.01, 0.19), (190, 0.21, 0.49), (130, 0.51, 0.99)]
    machines = []
    for count, lo, hi in strata:
        for _ in range(count):
            machines.append(rng.uniform(lo, hi))
    rng.shuffle(machines)
    rows = [HEADER]
    for i, mean in enumerate(machines):
        spread = min(mean - 0.005, 0.995 - mean, 0.05)
        offsets = [rng.uniform(-spread, spread) for _ in range(2)]
        offsets += [-o for o in offsets]
        for j, off in enumerate(offsets):
            used = round((mean + off) * cap)
            rows.append(f"n{i:04d},{3600 * j},{used},{cap}")
    write(root / "traces" / "synthetic_population.csv", rows)


def churn_step(root: Path):
    # One 80 GiB machine alternating between mostly idle and fully busy.
    cap = 80 * GIB
    used_gib = [8, 80, 24, 80, 0, 80]
    rows = [HEADER] + [f"gpu7,{t},{u * GIB},{cap}" for t, u in enumerate(used_gib)]
    write(root / "traces" / "churn_step.csv", rows)


def calibration(root: Path, seed: int):
    rng = random.Random(seed)
    sizes = [int(4096 * 2**k) for k in range(0, 18)]

    def emit(name, a, bw, points, note):
        lines = [f"# {note}", f"# truth fixed_cost={a!r} bandwidth={bw!r}"]
        lines += [f"{s},{lat!r}" for s, lat in points]
        write(root / "calibration" / name, lines)

    a, bw = 14.03e-6, 360e9
    emit("exact_peer.csv", a, bw, [(s, a + s / bw) for s in sizes], "exact affine line")
    a, bw = 34.94e-6, 37.5e9
    emit("exact_host.csv", a, bw, [(s, a + s / bw) for s in sizes], "exact affine line")
    two = [sizes[2], sizes[12]]
    emit("two_point.csv", a, bw, [(s, a + s / bw) for s in two], "two exact points")
    a, bw = 20e-6, 64e9
    noisy = [(s, (a + s / bw) * (1 + rng.gauss(0, 0.01))) for s in sizes]
    emit("noisy_1pct.csv", a, bw, noisy, "1% multiplicative gaussian noise")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", type=Path, default=Path(__file__).resolve().parents[1] / "data")
    parser.add_argument("--seed", type=int, default=20260)
    args = parser.parse_args()
    hand_fixture(args.root)
    synthetic_population(args.root, args.seed)
    churn_step(args.root)
    calibration(args.root, args.seed)


if __name__ == "__main__":
    main()
