"""Estimators and exact reference computations for height-field experiments.

Four groups live here: the exact ballot-problem dynamic program used as
an oracle for first-passage probabilities; crossing detectors for
rectangle events (axial paths above a level, ×-paths at a level);
sample estimators with jackknife standard errors (FKG covariances, the
decoupling matrix of squared truncated differences); and distributional
diagnostics (distance to a variance-matched normal, variance-vs-log
fits, rank trend tests).

Heights at an even vertex live on 2Z, with standard deviations of
order 1 at accessible sizes, so the primary normal-distance metric is
total variation against the normal law integrated over the unit cells
[m - 1, m + 1) around each even m; a Kolmogorov-Smirnov statistic on
dithered samples is kept as a secondary diagnostic.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import ndtr
from scipy.stats import spearmanr

from .heightfield import HeightField
from .lattice import Region, aligned_mask
from . import _kernels

__all__ = [
    "EstimateWithError",
    "StepDistribution",
    "ballot_dp",
    "ballot_bound_check",
    "crossing_geq",
    "crossing_eq_cross",
    "fkg_covariance",
    "paired_covariance",
    "normal_distance",
    "variance_fit",
    "decoupling_matrix",
    "truncated_square_covariance",
    "spearman_trend",
]

# Fractions stay exact up to this walk length; beyond it the survival
# DP switches to floating point.
_EXACT_N = 256


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    stderr: float
    n: int

    def __post_init__(self) -> None:
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")
        if self.n < 1:
            raise ValueError("sample count must be at least 1")


@dataclass(frozen=True)
class StepDistribution:
    """Mean-zero step law on a finite integer support.

    Probabilities may be floats or Fractions; floats are dyadic
    rationals, so the ballot DP stays exact either way.
    """

    support: tuple
    probabilities: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "probabilities", tuple(self.probabilities))
        if not self.support:
            raise ValueError("support must be a finite nonempty list")
        if len(self.support) != len(self.probabilities):
            raise ValueError("support and probabilities differ in length")
        if any(not isinstance(x, int) for x in self.support):
            raise ValueError("support must consist of integers")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support has repeated values")
        if any(p < 0 for p in self.probabilities):
            raise ValueError("probabilities must be nonnegative")
        total = float(sum(self.probabilities))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        mean = float(sum(x * p for x, p in zip(self.support, self.probabilities)))
        if abs(mean) > 1e-12:
            raise ValueError(f"step mean {mean} is not zero")


def _survival_masses(step: StepDistribution, n_max: int) -> list:
    """masses[i] = P[S_1 > 0, ..., S_i > 0], exact while i < _EXACT_N."""
    exact = n_max <= _EXACT_N
    if exact:
        probs = [Fraction(p) for p in step.probabilities]
        state: dict = {0: Fraction(1)}
        masses = [Fraction(1)]
    else:
        probs = [float(p) for p in step.probabilities]
        state = {0: 1.0}
        masses = [1.0]
    for _ in range(n_max - 1):
        new: dict = defaultdict(lambda: Fraction(0) if exact else 0.0)
        for pos, m in state.items():
            for x, p in zip(step.support, probs):
                q = pos + x
                if q > 0:
                    new[q] += m * p
        state = dict(new)
        masses.append(sum(state.values()))
    return masses


def ballot_dp(step: StepDistribution, n: int):
    """P[S_i > 0 for all 0 < i < n] for the mean-zero walk S.

    Exact Fraction for n <= 256 (dyadic/rational weights propagate
    exactly through the DP), float beyond.  n = 1 is the vacuous
    conjunction with probability 1.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    return _survival_masses(step, n)[n - 1]


def ballot_bound_check(step: StepDistribution, n_max: int):
    """Table of p_n * sqrt(n) for n <= n_max with its (min, max) band."""
    if n_max < 4:
        raise ValueError("n_max must be at least 4")
    masses = _survival_masses(step, n_max)
    table = [(n, float(masses[n - 1]) * math.sqrt(n)) for n in range(1, n_max + 1)]
    values = [v for _, v in table]
    return table, min(values), max(values)


def _flood(allowed: np.ndarray, seeds: np.ndarray, diag: bool) -> np.ndarray:
    w = allowed.shape[1]
    vis = _kernels.flood(
        np.ascontiguousarray(allowed.reshape(-1)).astype(np.uint8), seeds, w, diag)
    return vis.reshape(allowed.shape).astype(bool)


def _rect_crossing(field: HeightField, rect: Region, allowed: np.ndarray,
                   diag: bool) -> bool:
    dom = field.domain
    reg = aligned_mask(dom, rect.mask, rect.x0, rect.y0)
    if int(reg.sum()) != rect.n_vertices:
        raise ValueError("rectangle must lie inside the domain")
    allowed = allowed & reg
    jl = rect.x0 - dom.x0
    jr = rect.x0 + rect.mask.shape[1] - 1 - dom.x0
    seeds = np.flatnonzero(allowed[:, jl]) * dom.shape[1] + jl
    if seeds.size == 0:
        return False
    reached = _flood(allowed, seeds.astype(np.int64), diag)
    return bool(reached[:, jr].any())


def crossing_geq(field: HeightField, rect: Region, k: int) -> bool:
    """Left-right crossing of rect by an axial path with h >= k throughout."""
    return _rect_crossing(field, rect, field.grid >= k, diag=False)


def crossing_eq_cross(field: HeightField, rect: Region, k: int) -> bool:
    """Left-right crossing of rect by a ×-path with h = k throughout."""
    return _rect_crossing(field, rect, field.grid == k, diag=True)


def _jackknife_cov(f: np.ndarray, g: np.ndarray) -> tuple[float, float]:
    """Sample covariance (1/n normalization) with leave-one-out stderr."""
    n = f.size
    cov = float((f * g).mean() - f.mean() * g.mean())
    if n < 2:
        return cov, 0.0
    sf, sg, sfg = f.sum(), g.sum(), (f * g).sum()
    mf = (sf - f) / (n - 1)
    mg = (sg - g) / (n - 1)
    loo = (sfg - f * g) / (n - 1) - mf * mg
    stderr = math.sqrt((n - 1) / n * float(((loo - loo.mean()) ** 2).sum()))
    return cov, stderr


def paired_covariance(xs, ys) -> EstimateWithError:
    """Jackknife covariance of two aligned numeric samples."""
    f = np.asarray(list(xs), dtype=np.float64)
    g = np.asarray(list(ys), dtype=np.float64)
    if f.size != g.size:
        raise ValueError("samples must be aligned")
    if f.size == 0:
        raise ValueError("empty samples")
    cov, stderr = _jackknife_cov(f, g)
    return EstimateWithError(cov, stderr, int(f.size))


def fkg_covariance(samples, F, G, mode: str = "field") -> EstimateWithError:
    """Sample covariance of two increasing functionals of the field.

    mode "field" applies F, G to the sampled field; "absfield" applies
    them to the field of absolute heights.  Monotonicity of F and G is
    the caller's contract, not checked here.
    """
    if mode not in ("field", "absfield"):
        raise ValueError(f"unknown mode {mode!r}")
    fields = list(samples)
    if not fields:
        raise ValueError("empty samples")
    if mode == "absfield":
        fields = [HeightField(s.domain, np.abs(s.grid)) for s in fields]
    return paired_covariance([float(F(s)) for s in fields],
                             [float(G(s)) for s in fields])


def normal_distance(samples, dither_seed: int = 0) -> tuple[float, float]:
    """(tv, ks_dithered) distances from even-integer samples to the normal law.

    tv compares the empirical law on 2Z with the centered normal of
    matched second moment integrated over the cells [m - 1, m + 1);
    ks_dithered is the Kolmogorov-Smirnov statistic after adding
    uniform(-1, 1) dither drawn from dither_seed, against the same
    normal.  Both are deterministic given samples and seed.
    """
    arr = np.asarray(list(samples), dtype=np.int64)
    if arr.size < 100:
        raise ValueError("need at least 100 samples")
    if np.any(arr & 1):
        raise ValueError("samples must be even integers")
    m2 = float((arr.astype(np.float64) ** 2).mean())
    if m2 == 0.0:
        raise ValueError("zero-variance samples cannot be matched to a normal")
    sigma = math.sqrt(m2)
    n = arr.size

    reach = 2 * math.ceil(4 * sigma)
    lo = min(int(arr.min()), -reach)
    hi = max(int(arr.max()), reach)
    ms = np.arange(lo, hi + 1, 2, dtype=np.int64)
    q = ndtr((ms + 1) / sigma) - ndtr((ms - 1) / sigma)
    counts = np.zeros(ms.size, dtype=np.int64)
    idx = (arr - lo) // 2
    np.add.at(counts, idx, 1)
    p = counts / n
    tv = 0.5 * (float(np.abs(p - q).sum()) + max(0.0, 1.0 - float(q.sum())))

    rng = np.random.default_rng(dither_seed)
    x = np.sort(arr + rng.uniform(-1.0, 1.0, size=n))
    cdf = ndtr(x / sigma)
    steps = np.arange(1, n + 1) / n
    ks = float(max(np.max(steps - cdf), np.max(cdf - (steps - 1.0 / n))))
    return tv, ks


def variance_fit(points) -> tuple[float, float, float]:
    """Least squares of variance against ln N: (slope, intercept, max_rel_residual)."""
    pts = [(int(N), float(v)) for N, v in points]
    if len({N for N, _ in pts}) < 3:
        raise ValueError("need at least 3 distinct N")
    x = np.log([N for N, _ in pts])
    y = np.asarray([v for _, v in pts])
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    with np.errstate(divide="ignore"):
        rel = np.abs(y - fit) / np.abs(fit)
    return float(slope), float(intercept), float(rel.max())


def decoupling_matrix(profiles) -> tuple[np.ndarray, np.ndarray]:
    """Covariance matrix of squared truncated differences across scales.

    Returns (cov, stderr), both (K, K): cov[k, l] is the sample
    covariance of the squared k+1-th truncated increment with the
    squared l+1-th, stderr its jackknife error.
    """
    return truncated_square_covariance([p.truncated for p in profiles])


def truncated_square_covariance(increments) -> tuple[np.ndarray, np.ndarray]:
    """decoupling_matrix on raw per-sample increment rows."""
    T = np.asarray(list(increments), dtype=np.float64)
    if T.ndim != 2 or T.shape[0] == 0:
        raise ValueError("empty input")
    T = T ** 2
    n, K = T.shape
    M = T - T.mean(axis=0)
    cov = M.T @ M / n
    if n < 2:
        return cov, np.zeros_like(cov)
    sf = T.sum(axis=0)
    sfg = T.T @ T
    loo = (sfg[None, :, :] - T[:, :, None] * T[:, None, :]) / (n - 1)
    mf = (sf[None, :] - T) / (n - 1)
    loo = loo - mf[:, :, None] * mf[:, None, :]
    stderr = np.sqrt((n - 1) / n * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return cov, stderr


def spearman_trend(xs, ys) -> tuple[float, float]:
    """Spearman rho with the one-sided p-value for a decreasing trend."""
    rho, p_two = spearmanr(xs, ys)
    if math.isnan(rho):
        raise ValueError("trend test needs non-constant inputs")
    p_neg = p_two / 2 if rho < 0 else 1 - p_two / 2
    return float(rho), float(p_neg)
