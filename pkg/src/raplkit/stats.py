"""Statistical toolbox for overhead analysis of measurement-tool runs.

Implements the analysis pipeline applied to run times and energy readings:
descriptive summaries, Shapiro-Wilk normality screening, Kruskal-Wallis
omnibus ranks test with tie correction, Dunn's post hoc pairwise z-tests with
Bonferroni adjustment, Cliff's delta effect sizes, and baseline-relative
overhead arithmetic.  Heavy distribution machinery (normal quantile, chi-square
tail) comes from scipy; the test statistics themselves are computed here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import chi2

__all__ = [
    "Group",
    "DescriptiveStats",
    "TestResult",
    "DunnResult",
    "OverheadRow",
    "DegenerateSampleError",
    "describe",
    "shapiro_wilk",
    "kruskal_wallis",
    "dunn_posthoc",
    "cliffs_delta",
    "classify_delta",
    "overhead",
]


class DegenerateSampleError(ValueError):
    """The sample has zero variance; the statistic is undefined."""


@dataclass(frozen=True)
class Group:
    """A labelled collection of measurements (times or energies)."""

    label: str
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) == 0:
            raise ValueError(f"group {self.label!r} is empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError(f"group {self.label!r} contains non-finite values")


@dataclass(frozen=True)
class DescriptiveStats:
    n: int
    mean: float
    std: float  # sample standard deviation (n-1 denominator)
    min: float
    q25: float
    median: float
    q75: float
    max: float

    def to_dict(self) -> dict:
        return {
            "n": self.n, "mean": self.mean, "std": self.std, "min": self.min,
            "q25": self.q25, "median": self.median, "q75": self.q75, "max": self.max,
        }


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str


@dataclass(frozen=True)
class OverheadRow:
    """Tool-vs-baseline median comparison."""

    baseline_median: float
    tool_median: float
    delta_t: float
    pct_delta: float


def describe(values: Iterable[float]) -> DescriptiveStats:
    """Mean, sample std and linear-interpolation quantiles of a sample."""
    x = np.asarray(list(values), dtype=float)
    if x.size == 0:
        raise ValueError("cannot describe an empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    q25, med, q75 = np.quantile(x, [0.25, 0.5, 0.75])  # linear interpolation
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return DescriptiveStats(
        n=int(x.size),
        mean=float(np.mean(x)),
        std=std,
        min=float(np.min(x)),
        q25=float(q25),
        median=float(med),
        q75=float(q75),
        max=float(np.max(x)),
    )


# ---------------------------------------------------------------------------
# Shapiro-Wilk (AS R94, Royston 1995), valid for 3 <= n <= 5000.

_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)


def _poly_asc(coeffs: Sequence[float], x: float) -> float:
    """Evaluate sum(coeffs[i] * x**i)."""
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def shapiro_wilk(values: Iterable[float]) -> TestResult:
    """W statistic and approximate p-value for departure from normality.

    Weights use the normalized expected normal order statistics with the
    published polynomial end corrections; the p-value comes from the
    size-dependent normalizing transforms of W.  Raises
    :class:`DegenerateSampleError` on zero-variance input and ``ValueError``
    outside the supported size range 3..5000.
    """
    xs = sorted(float(v) for v in values)
    n = len(xs)
    if n < 3 or n > 5000:
        raise ValueError(f"sample size {n} outside supported range [3, 5000]")
    if not all(math.isfinite(v) for v in xs):
        raise ValueError("sample contains non-finite values")
    if xs[0] == xs[-1]:
        raise DegenerateSampleError("zero variance sample: W is undefined")

    m = np.array([ndtri((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])
    ssq = float(np.dot(m, m))
    a = np.empty(n)
    if n == 3:
        a[0], a[1], a[2] = -math.sqrt(0.5), 0.0, math.sqrt(0.5)
    else:
        rsn = 1.0 / math.sqrt(n)
        a_n = _poly_asc(_SW_C1, rsn) + m[-1] / math.sqrt(ssq)
        if n > 5:
            a_n1 = _poly_asc(_SW_C2, rsn) + m[-2] / math.sqrt(ssq)
            phi = (ssq - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (
                1.0 - 2.0 * a_n**2 - 2.0 * a_n1**2
            )
            lo = 2
            a[n - 2], a[1] = a_n1, -a_n1
        else:
            phi = (ssq - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n**2)
            lo = 1
        a[n - 1], a[0] = a_n, -a_n
        rp = math.sqrt(phi)
        for i in range(lo, n - lo):
            a[i] = m[i] / rp

    xbar = math.fsum(xs) / n
    numerator = math.fsum(a[i] * xs[i] for i in range(n))
    denominator = math.fsum((v - xbar) ** 2 for v in xs)
    w = min(1.0, numerator * numerator / denominator)

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        p = min(max(p, 0.0), 1.0)
        return TestResult(statistic=w, p_value=p, method="shapiro-wilk")

    y = math.log1p(-w)  # log(1 - W)
    if n <= 11:
        gamma = -2.273 + 0.459 * n
        if y >= gamma:
            # extreme departure from normality: transform saturates
            return TestResult(statistic=w, p_value=1e-99, method="shapiro-wilk")
        mu = _poly_asc((0.5440, -0.39978, 0.025054, -0.0006714), float(n))
        sigma = math.exp(_poly_asc((1.3822, -0.77857, 0.062767, -0.0020322), float(n)))
        z = (-math.log(gamma - y) - mu) / sigma
    else:
        u = math.log(n)
        mu = _poly_asc((-1.5861, -0.31082, -0.083751, 0.0038915), u)
        sigma = math.exp(_poly_asc((-0.4803, -0.082676, 0.0030302), u))
        z = (y - mu) / sigma
    p = 0.5 * math.erfc(z / math.sqrt(2.0))  # upper normal tail
    return TestResult(statistic=w, p_value=p, method="shapiro-wilk")


# ---------------------------------------------------------------------------
# Rank machinery shared by Kruskal-Wallis and Dunn.


def _midranks(values: Sequence[float]) -> tuple[list[float], list[int]]:
    """Midranks (1-based, ties averaged) and the tie-group sizes."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    tie_sizes: list[int] = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg_rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg_rank
        tie_sizes.append(j - i + 1)
        i = j + 1
    return ranks, tie_sizes


def _as_groups(groups: Sequence) -> list[Group]:
    """Accept Group objects, (label, values) pairs, or bare value sequences."""
    out: list[Group] = []
    for i, g in enumerate(groups):
        if isinstance(g, Group):
            out.append(g)
        elif (
            isinstance(g, tuple)
            and len(g) == 2
            and isinstance(g[0], str)
            and not isinstance(g[1], str)
        ):
            out.append(Group(label=g[0], values=tuple(float(v) for v in g[1])))
        else:
            out.append(Group(label=f"group{i}", values=tuple(float(v) for v in g)))
    if len(out) < 2:
        raise ValueError(f"need at least 2 groups, got {len(out)}")
    return out


def kruskal_wallis(groups: Sequence) -> TestResult:
    """Rank-based omnibus test that the groups share one distribution.

    Midranks over the pooled sample, tie-corrected H, chi-square upper tail
    with k-1 degrees of freedom.  When every pooled value ties, H is defined
    as 0 (no discriminating information).
    """
    gs = _as_groups(groups)
    pooled: list[float] = [v for g in gs for v in g.values]
    n_total = len(pooled)
    ranks, tie_sizes = _midranks(pooled)
    # per-group rank sums
    h = 0.0
    offset = 0
    for g in gs:
        n_g = len(g.values)
        r_sum = math.fsum(ranks[offset : offset + n_g])
        h += r_sum * r_sum / n_g
        offset += n_g
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)
    correction = 1.0 - math.fsum(t**3 - t for t in tie_sizes) / (n_total**3 - n_total)
    h = h / correction if correction > 0 else 0.0
    p = float(chi2.sf(h, len(gs) - 1))
    return TestResult(statistic=h, p_value=p, method="kruskal-wallis")


@dataclass(frozen=True)
class DunnResult:
    """Pairwise post hoc comparison matrices (symmetric, unit diagonal)."""

    labels: tuple[str, ...]
    z: tuple[tuple[float, ...], ...]
    p_raw: tuple[tuple[float, ...], ...]
    p_adjusted: tuple[tuple[float, ...], ...]
    n_comparisons: int

    def pair(self, a: str, b: str) -> tuple[float, float, float]:
        """(z, p_raw, p_adjusted) for a pair of group labels."""
        i, j = self.labels.index(a), self.labels.index(b)
        return self.z[i][j], self.p_raw[i][j], self.p_adjusted[i][j]


def dunn_posthoc(groups: Sequence) -> DunnResult:
    """Dunn's z-tests on pooled midranks with tie correction and Bonferroni.

    ``z_ij = (meanrank_i - meanrank_j) / sqrt((N(N+1)/12 - T) (1/n_i + 1/n_j))``
    with ``T = sum(t^3 - t) / (12 (N-1))``; two-sided p from the normal tail;
    adjusted ``p = min(1, m * p_raw)`` for ``m = k(k-1)/2`` comparisons.
    """
    gs = _as_groups(groups)
    k = len(gs)
    pooled = [v for g in gs for v in g.values]
    n_total = len(pooled)
    ranks, tie_sizes = _midranks(pooled)
    mean_ranks: list[float] = []
    offset = 0
    for g in gs:
        n_g = len(g.values)
        mean_ranks.append(math.fsum(ranks[offset : offset + n_g]) / n_g)
        offset += n_g
    ties_term = math.fsum(t**3 - t for t in tie_sizes) / (12.0 * (n_total - 1))
    base_var = n_total * (n_total + 1) / 12.0 - ties_term
    m = k * (k - 1) // 2
    z = [[0.0] * k for _ in range(k)]
    p_raw = [[1.0] * k for _ in range(k)]
    p_adj = [[1.0] * k for _ in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            var = base_var * (1.0 / len(gs[i].values) + 1.0 / len(gs[j].values))
            zij = (mean_ranks[i] - mean_ranks[j]) / math.sqrt(var) if var > 0 else 0.0
            praw = math.erfc(abs(zij) / math.sqrt(2.0))  # two-sided normal tail
            padj = min(1.0, m * praw)
            z[i][j], z[j][i] = zij, -zij
            p_raw[i][j] = p_raw[j][i] = praw
            p_adj[i][j] = p_adj[j][i] = padj
    return DunnResult(
        labels=tuple(g.label for g in gs),
        z=tuple(tuple(row) for row in z),
        p_raw=tuple(tuple(row) for row in p_raw),
        p_adjusted=tuple(tuple(row) for row in p_adj),
        n_comparisons=m,
    )


def cliffs_delta(a: Iterable[float], b: Iterable[float]) -> float:
    """Cliff's delta by exact pair enumeration: P(a > b) - P(a < b).

    +1 when every value of ``a`` exceeds every value of ``b``; -1 for the
    reverse; 0 for complete overlap.
    """
    xa = [float(v) for v in a]
    xb = [float(v) for v in b]
    if not xa or not xb:
        raise ValueError("cliffs_delta requires two non-empty samples")
    greater = less = 0
    for va in xa:
        for vb in xb:
            if va > vb:
                greater += 1
            elif va < vb:
                less += 1
    return (greater - less) / (len(xa) * len(xb))


def classify_delta(delta: float) -> str:
    """Magnitude label for a Cliff's delta (thresholds 0.147 / 0.33 / 0.474)."""
    d = abs(delta)
    if d > 1.0 + 1e-12:
        raise ValueError(f"delta must lie in [-1, 1], got {delta}")
    if d < 0.147:
        return "negligible"
    if d < 0.33:
        return "small"
    if d < 0.474:
        return "medium"
    return "large"


def overhead(baseline_median: float, tool_median: float) -> OverheadRow:
    """Absolute and relative slowdown of a tool run versus the baseline."""
    if baseline_median <= 0:
        raise ValueError("baseline median must be positive")
    delta = tool_median - baseline_median
    return OverheadRow(
        baseline_median=baseline_median,
        tool_median=tool_median,
        delta_t=delta,
        pct_delta=100.0 * delta / baseline_median,
    )
