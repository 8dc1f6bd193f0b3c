"""IsoFLOP parabolas and power-law extrapolation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DESK_BUDGETS = (1e10, 3e10, 1e11)


class DegenerateFit(ValueError):
    pass


class NonPositiveInput(ValueError):
    pass


@dataclass
class IsoFlopFit:
    budget_flops: float
    a: float
    b: float
    c: float
    argmin_params: float
    residual: float
    n_points: int

    @property
    def min_loss(self) -> float:
        x = -self.b / (2 * self.a)
        return self.a * x * x + self.b * x + self.c


@dataclass
class PowerLawFit:
    coefficient: float
    exponent: float

    def __call__(self, x):
        return self.coefficient * np.asarray(x, dtype=float) ** self.exponent


def fit_isoflop(params: Sequence[float], losses: Sequence[float], budget_flops: float = float("nan")) -> IsoFlopFit:
    """Least-squares ``loss = a x^2 + b x + c`` with ``x = log10(params)``.

    Requires three distinct model sizes and an upward-opening parabola.
    """
    p = np.asarray(params, dtype=np.float64)
    y = np.asarray(losses, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError("params and losses must be equal-length sequences")
    if np.any(p <= 0):
        raise NonPositiveInput("model sizes must be positive")
    if len(np.unique(p)) < 3:
        raise DegenerateFit("need at least three distinct model sizes")
    x = np.log10(p)
    # Project onto polynomials orthogonal over the sample points, in centred
    # coordinates. The raw Vandermonde system is badly conditioned for log-sizes
    # around 7, and on symmetric designs the projections cancel exactly, so a
    # noise-free parabola returns its vertex without rounding.
    m = math.fsum(x) / len(x)
    u = x - m

    def dot(p, q):
        return math.fsum(p * q)

    uu = dot(u, u)
    alpha = dot(u * u, u) / uu
    p2 = u * u - alpha * u - uu / len(u)
    p2p2 = dot(p2, p2)
    if p2p2 == 0.0:
        raise DegenerateFit("sizes do not determine a parabola")
    a = dot(y, p2) / p2p2
    bu = dot(y, u) / uu - a * alpha
    cu = math.fsum(y) / len(y) - a * uu / len(u)
    if not a > 0:
        raise DegenerateFit(f"parabola opens downward (a={a:.3g})")
    resid = float(np.sqrt(np.mean((a * u * u + bu * u + cu - y) ** 2)))
    x_star = m - bu / (2 * a)
    b = bu - 2 * a * m
    c = a * m * m - bu * m + cu
    return IsoFlopFit(float(budget_flops), a, b, c, float(10.0 ** x_star), resid, len(p))


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> PowerLawFit:
    """``y = coefficient * x**exponent`` by linear least squares in log-log space."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length sequences")
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveInput("power-law fits need positive inputs")
    if len(np.unique(x)) < 2:
        raise DegenerateFit("need at least two distinct budgets")
    lx, ly = np.log10(x), np.log10(y)
    mx, my = lx.mean(), ly.mean()
    slope = float(((lx - mx) * (ly - my)).sum() / ((lx - mx) ** 2).sum())
    return PowerLawFit(float(10.0 ** (my - slope * mx)), slope)


# ------------------------------------------------------------------ ledgers

@dataclass
class RunCurve:
    family: str
    params: int
    flops: np.ndarray
    losses: np.ndarray

    def loss_at(self, budget: float, slack: float = 0.05) -> float | None:
        """Loss at the last logged step within ``budget``, if that step is within ``slack`` of it."""
        idx = np.nonzero(self.flops <= budget * (1 + 1e-9))[0]
        if len(idx) == 0 or self.flops[idx[-1]] < (1 - slack) * budget:
            return None
        return float(self.losses[idx[-1]])


def load_run(run_dir) -> RunCurve:
    """Read ``ledger.csv`` and the ``run.json`` provenance next to it."""
    run_dir = Path(run_dir)
    if run_dir.is_file():
        run_dir = run_dir.parent
    meta = json.loads((run_dir / "run.json").read_text())
    flops, losses = [], []
    with open(run_dir / "ledger.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            flops.append(float(row["flops"]))
            losses.append(float(row["loss"]))
    f = np.array(flops)
    if np.any(np.diff(f) <= 0):
        raise ValueError(f"{run_dir}: flops must increase strictly within a run")
    return RunCurve(meta["model"], int(meta["params"]), f, np.array(losses))


def isoflop_points(runs: Iterable[RunCurve], budgets: Sequence[float]) -> list[tuple[str, float, int, float]]:
    """Long-format (family, budget, params, loss) rows."""
    rows = []
    for r in runs:
        for b in budgets:
            loss = r.loss_at(b)
            if loss is not None:
                rows.append((r.family, float(b), r.params, loss))
    rows.sort()
    return rows


def fit_scaling(points: list[tuple[str, float, int, float]]):
    """Per family: isoFLOP fits per budget and power laws for optimal params and examples."""
    fits: list[tuple[str, IsoFlopFit]] = []
    laws: list[tuple[str, str, PowerLawFit]] = []
    for fam in sorted({p[0] for p in points}):
        per_budget: dict[float, list[tuple[int, float]]] = {}
        for f, b, n, loss in points:
            if f == fam:
                per_budget.setdefault(b, []).append((n, loss))
        fam_fits = []
        for b in sorted(per_budget):
            ns, ls = zip(*per_budget[b])
            try:
                fit = fit_isoflop(ns, ls, b)
            except DegenerateFit:
                continue
            fits.append((fam, fit))
            fam_fits.append(fit)
        if len(fam_fits) >= 2:
            C = [f.budget_flops for f in fam_fits]
            N = [f.argmin_params for f in fam_fits]
            laws.append((fam, "params", fit_power_law(C, N)))
            laws.append((fam, "tokens", fit_power_law(C, [c / (6 * n) for c, n in zip(C, N)])))
    return fits, laws


def write_isoflop_csv(fits, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("family", "budget_flops", "a", "b", "c", "argmin_params", "residual", "n_points"))
        for fam, f in fits:
            w.writerow((fam, repr(f.budget_flops), repr(f.a), repr(f.b), repr(f.c), repr(f.argmin_params),
                        repr(f.residual), f.n_points))


def write_powerlaw_csv(laws, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("family", "quantity", "coefficient", "exponent"))
        for fam, qty, law in laws:
            w.writerow((fam, qty, repr(law.coefficient), repr(law.exponent)))


def write_long_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("family", "budget_flops", "params", "loss"))
        for fam, b, n, loss in points:
            w.writerow((fam, repr(b), n, repr(loss)))


def extrapolation_line(law: PowerLawFit, budget: float, unit: str) -> str:
    """Human-readable projection, e.g. ``1.06B params at 1e+22 FLOPs``."""
    v = float(law(budget))
    for scale, suffix in ((1e12, "T"), (1e9, "B"), (1e6, "M"), (1e3, "k")):
        if v >= scale:
            return f"{v / scale:.2f}{suffix} {unit} at {budget:.0e} FLOPs"
    return f"{v:.3g} {unit} at {budget:.0e} FLOPs"


def log10_error(a: float, b: float) -> float:
    return abs(math.log10(a) - math.log10(b))
