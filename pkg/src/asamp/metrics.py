"""Accuracy and progress metrics plus the per-iteration run trace."""

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import ht

NMSE_FLOOR_DB = -300.0


class ZeroNoise(ValueError):
    """The KKT normalization needs sigma_w > 0 (pass sigma_w2=1 for
    noise-free constructions)."""


class ZeroTruth(ValueError):
    """NMSE is undefined against an all-zero ground truth."""


class EmptyInput(ValueError):
    """Aggregation over an empty collection of traces."""


def kkt_residual(x, problem):
    """Relative KKT residual of the lasso objective, noise-normalized.

    The objective is scaled by 1/sigma_w^2 (data term ||y' - A'x||^2/2 with
    y' = y/sigma_w, A' = A/sigma_w, threshold lam/sigma_w^2) so the residual
    is invariant under (A, y, lam, sigma_w) -> (cA, cy, c^2 lam, c sigma_w).
    Zero exactly at the optimum.
    """
    if problem.sigma_w2 <= 0.0:
        raise ZeroNoise("KKT normalization requires sigma_w2 > 0")
    x = np.asarray(x)
    A, y = problem.A, problem.y
    s2 = problem.sigma_w2
    sw = math.sqrt(s2)
    r = y - A @ x
    grad = -(ht(A) @ r) / s2
    z = x - grad
    t = problem.lam / s2
    prox = np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
    num = float(np.linalg.norm(x - prox))
    den = 1.0 + float(np.linalg.norm(x)) + float(np.linalg.norm(r)) / sw
    return num / den


def nmse_db(x, x_dag):
    """10 log10(||x - x_dag||^2 / ||x_dag||^2), floored at -300 dB."""
    x_dag = np.asarray(x_dag)
    energy = float(np.linalg.norm(x_dag) ** 2)
    if energy == 0.0:
        raise ZeroTruth("ground truth has zero norm")
    err = float(np.linalg.norm(np.asarray(x) - x_dag) ** 2)
    if err == 0.0:
        return NMSE_FLOOR_DB
    return max(10.0 * math.log10(err / energy), NMSE_FLOOR_DB)


@dataclass
class RunTrace:
    """Per-iteration records of one solver run.

    Iterations are strictly increasing and the exploded flag is sticky:
    once a run degenerates every later record keeps the flag.
    """

    solver: str = ""
    replication: int = 0
    iters: list = field(default_factory=list)
    kkt: list = field(default_factory=list)
    nmse: list = field(default_factory=list)
    support_size: list = field(default_factory=list)
    v: list = field(default_factory=list)
    v_hat: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)
    exploded: list = field(default_factory=list)

    def record(self, it, kkt=math.nan, nmse=math.nan, support_size=0,
               v=math.nan, v_hat=math.nan, elapsed=0.0, exploded=False):
        if self.iters and it <= self.iters[-1]:
            raise ValueError("iteration indices must be strictly increasing")
        if self.exploded and self.exploded[-1]:
            exploded = True
        self.iters.append(int(it))
        self.kkt.append(float(kkt))
        self.nmse.append(float(nmse))
        self.support_size.append(int(support_size))
        self.v.append(float(v))
        self.v_hat.append(float(v_hat))
        self.elapsed.append(float(elapsed))
        self.exploded.append(bool(exploded))

    def __len__(self):
        return len(self.iters)

    @property
    def final_elapsed(self):
        return self.elapsed[-1] if self.elapsed else 0.0

    @property
    def ever_exploded(self):
        return bool(self.exploded) and self.exploded[-1]

    def value_at(self, metric, it):
        """Metric value at iteration index it, carrying the last recorded
        value forward for runs that stopped early; +inf once exploded."""
        col = getattr(self, metric)
        idx = np.searchsorted(self.iters, it, side="right") - 1
        if idx < 0:
            idx = 0
        if self.exploded[idx]:
            return math.inf
        return col[idx]


def median_over_runs(traces, metric, it):
    """Median of a metric at one iteration index across runs.

    Uses the lower of the two middle values for even counts, so a single
    exploded run (which contributes +inf) can never contaminate the median
    with an averaged infinity.
    """
    traces = list(traces)
    if not traces:
        raise EmptyInput("no traces to aggregate")
    vals = sorted(t.value_at(metric, it) for t in traces)
    return vals[(len(vals) - 1) // 2]


def median_curve(traces, metric, upto=None):
    """Per-iteration medians across runs on the union iteration grid."""
    traces = list(traces)
    if not traces:
        raise EmptyInput("no traces to aggregate")
    last = max(t.iters[-1] for t in traces)
    if upto is not None:
        last = min(last, upto)
    its = np.arange(last + 1)
    return its, np.array([median_over_runs(traces, metric, k) for k in its])


def window_min(iters, values, width=5):
    """Minimum over consecutive windows; one point per window.

    Mirrors plotting one point per `width` iterations, each the best value
    seen inside the window.  Returns (window_end_iters, window_minima).
    """
    iters = np.asarray(iters)
    values = np.asarray(values, dtype=float)
    ends, mins = [], []
    for start in range(0, len(iters), width):
        chunk = values[start:start + width]
        ends.append(int(iters[min(start + width - 1, len(iters) - 1)]))
        mins.append(float(np.min(chunk)))
    return np.array(ends), np.array(mins)
