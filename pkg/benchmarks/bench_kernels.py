"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on identical inputs under both backends; the outputs are
compared before timing so a speedup never hides a disagreement.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from fleetlab._kernels import _pure
from fleetlab.sim import generate_floor, simulate
from fleetlab.sim.policy import _reverse_csr

try:
    from fleetlab._kernels import _core
except ImportError:  # extension not built
    _core = None


def _cases():
    rng = np.random.default_rng(0)
    for n in (60, 240):
        cost = np.abs(rng.normal(size=(n, 1)) - rng.normal(size=(1, n)))
        yield f"dtw_accumulate {n}x{n}", "dtw_accumulate", (cost,)
    floor = generate_floor("storage", 24, 24, 0)
    indptr, indices = _reverse_csr(floor)
    blocked = (rng.random(floor.n_vertices) < 0.1).astype(np.uint8)
    yield f"bfs_distances {floor.n_vertices} vertices", "bfs_distances", (indptr, indices, 0, blocked)


def _best(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _core is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    print(f"{'kernel':<34}{'pure (ms)':>12}{'compiled (ms)':>15}{'speedup':>10}")
    for label, name, inputs in _cases():
        fast, slow = getattr(_core, name), getattr(_pure, name)
        a, b = fast(*inputs), slow(*inputs)
        same = np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b
        if not same:
            raise SystemExit(f"{label}: backends disagree")
        t_slow, t_fast = _best(slow, inputs, args.repeat), _best(fast, inputs, args.repeat)
        print(f"{label:<34}{t_slow * 1e3:>12.3f}{t_fast * 1e3:>15.3f}{t_slow / t_fast:>9.1f}x")

    floor = generate_floor("storage", 8, 8, 1)
    t = min(timeit.repeat(lambda: simulate(floor, 6, 300, 1), number=1, repeat=args.repeat))
    print(f"\nsimulate 8x8 floor, 6 robots, 300 s: {t:.3f} s (active backend)")


if __name__ == "__main__":
    main()
