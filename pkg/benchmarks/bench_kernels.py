"""Compare the compiled and pure-Python paths of the board-scan kernels.

Runs the same workload twice: once in-process (whatever path the current
environment selects) and once in a subprocess with S2E_NO_NUMBA=1.  Prints
per-kernel timings and the speedup ratio.

Usage: python3 benchmarks/bench_kernels.py [--boards N] [--repeats R]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _random_boards(n: int, seed: int) -> np.ndarray:
    """Random legal-ish grids: bottom-up fills with alternating bias."""
    rng = np.random.default_rng(seed)
    boards = np.zeros((n, 6, 7), dtype=np.int8)
    for i in range(n):
        for col in range(7):
            height = int(rng.integers(0, 7))
            for row in range(min(height, 6)):
                boards[i, row, col] = 1 + int(rng.integers(0, 2))
    return boards


def run_workload(n_boards: int, repeats: int, seed: int = 0) -> dict[str, float]:
    from s2e import _accel, connect4

    boards = _random_boards(n_boards, seed)
    # warm up compilation outside the timed region
    connect4.winner_scan(boards[0])
    connect4.column_heights(boards[0])
    connect4.winning_columns(boards[0].copy(), 1)

    timings: dict[str, float] = {"numba_enabled": float(_accel.NUMBA_ENABLED)}

    t0 = time.perf_counter()
    for _ in range(repeats):
        for b in boards:
            connect4.winner_scan(b)
    timings["winner_scan"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for _ in range(repeats):
        for b in boards:
            connect4.column_heights(b)
    timings["column_heights"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for _ in range(repeats):
        for b in boards:
            connect4.winning_columns(b.copy(), 1)
            connect4.winning_columns(b.copy(), 2)
    timings["winning_columns"] = time.perf_counter() - t0

    return timings


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--boards", type=int, default=300)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--json", action="store_true", help="emit raw timings as JSON")
    args = parser.parse_args()

    if os.environ.get("_BENCH_CHILD"):
        print(json.dumps(run_workload(args.boards, args.repeats)))
        return

    fast = run_workload(args.boards, args.repeats)

    env = dict(os.environ, S2E_NO_NUMBA="1", _BENCH_CHILD="1")
    out = subprocess.run(
        [sys.executable, os.path.abspath(__file__),
         "--boards", str(args.boards), "--repeats", str(args.repeats)],
        env=env, capture_output=True, text=True, check=True,
    )
    slow = json.loads(out.stdout.strip().splitlines()[-1])

    if args.json:
        print(json.dumps({"compiled": fast, "fallback": slow}, indent=2))
        return

    print(f"{args.boards} boards x {args.repeats} repeats")
    print(f"compiled path numba_enabled={bool(fast['numba_enabled'])}, "
          f"fallback numba_enabled={bool(slow['numba_enabled'])}")
    print(f"{'kernel':18s} {'compiled':>10s} {'fallback':>10s} {'speedup':>8s}")
    for key in ("winner_scan", "column_heights", "winning_columns"):
        ratio = slow[key] / fast[key] if fast[key] > 0 else float("inf")
        print(f"{key:18s} {fast[key]:9.4f}s {slow[key]:9.4f}s {ratio:7.1f}x")


if __name__ == "__main__":
    main()
