"""Height decomposition across dyadic scales via level circuits.

For an even target x in D_N, the circuits C_1..C_K at radii
r_k = max(1, floor(N / 2^k)) carry heights h_1..h_K, and

    phi(x) = sum_k Delta_k + residual,   Delta_k = h_k - h_{k-1},

exactly, with h_0 = 0 the boundary height.  Conditionally on everything
outside the interior of C_k, the mean of phi(x) equals h_k (the
reflection across the circuit height is an involution on extensions),
so the Delta_k are martingale increments of the conditional expectation
of the target height; the residual closes the telescope at the
innermost scale.  The identity is validated exactly against full
enumeration on small domains, not assumed.

Truncation: Delta_k is kept only when the annulus between the boxes of
radii r_{k+w} and r_k contains a family loop, with window
w = ceil(log2 log2 N) floored at 1.  Scale-truncated profiles feed the
variance estimate sigma_hat and the decoupling covariance matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .heightfield import HeightField
from .lattice import EvenDomain, Region, Vertex, annulus_region, parity
from .loops import (
    LoopFamily,
    _box,
    circuits_at_scales,
    count_in_annulus,
    extract_loop_family,
    scale_radii,
)
from .stats import EstimateWithError

__all__ = [
    "MartingaleProfile",
    "MultipointProfile",
    "profile",
    "truncate",
    "sigma_hat",
    "multipoint_profiles",
    "separation_scale",
    "truncation_window",
]


@dataclass(eq=False)
class MartingaleProfile:
    """Per-sample scale increments of the target height.

    deltas[k-1] is the height step between circuits C_{k-1} and C_k;
    truncated mirrors deltas with entries zeroed where the truncation
    window held no loop (truncation_flags records the window events).
    """

    deltas: list[int]
    residual: int
    truncated: list[int]
    truncation_flags: list[bool]
    target_height: int

    def __post_init__(self) -> None:
        if any(d % 2 for d in self.deltas) or self.residual % 2:
            raise ValueError("scale increments must be even integers")
        if sum(self.deltas) + self.residual != self.target_height:
            raise ValueError("increments do not telescope to the target height")
        if len(self.truncated) != len(self.deltas):
            raise ValueError("truncated length differs from deltas")
        if len(self.truncation_flags) != len(self.deltas):
            raise ValueError("flag length differs from deltas")
        for d, t, f in zip(self.deltas, self.truncated, self.truncation_flags):
            if t != (d if f else 0):
                raise ValueError("truncated entries must be deltas gated by flags")


@dataclass(eq=False)
class MultipointProfile:
    """Profiles of several bulk targets with their separation scale.

    m0 is the smallest scale index whose boxes around the targets are
    pairwise disjoint; increments at scales >= m0 are the ones the
    multipoint limit treats as independent across targets.
    """

    targets: list[Vertex]
    profiles: list[MartingaleProfile]
    m0: int


def truncation_window(N: int) -> int:
    """w = ceil(log2 log2 N), floored at 1."""
    if N < 2:
        raise ValueError("N must be at least 2")
    return max(1, math.ceil(math.log2(max(1.0, math.log2(N)))))


@lru_cache(maxsize=256)
def _flag_regions(target: Vertex, N: int) -> tuple:
    """Per-scale truncation annuli A_{r_{k+w}, r_k}; None when empty."""
    w = truncation_window(N)
    regions: list[Region | None] = []
    for k, r_out in enumerate(scale_radii(N), start=1):
        r_in = max(1, N >> (k + w))
        regions.append(annulus_region(target, r_in, r_out) if r_in < r_out else None)
    return tuple(regions)


def _scale_heights(family: LoopFamily, N: int) -> list[int]:
    heights = [0]
    j = 1
    cur = family.loops[0]
    for r in scale_radii(N):
        box = _box(family.target, r)
        while j < len(family.loops):
            if box.contains_all(family.loops[j].circuit):
                cur = family.loops[j]
                break
            j += 1
        heights.append(cur.height)
    return heights


def truncate(profile: MartingaleProfile, family: LoopFamily, N: int) -> MartingaleProfile:
    """Refill truncated entries and flags from the family's loop positions."""
    heights = _scale_heights(family, N)
    deltas = [heights[k] - heights[k - 1] for k in range(1, len(heights))]
    if deltas != list(profile.deltas):
        raise ValueError("profile increments do not match the family")
    flags = []
    for region in _flag_regions(family.target, N):
        if region is None:
            flags.append(False)
        else:
            contained, _ = count_in_annulus(family, region)
            flags.append(contained >= 1)
    truncated = [d if f else 0 for d, f in zip(deltas, flags)]
    return MartingaleProfile(
        deltas=deltas,
        residual=profile.residual,
        truncated=truncated,
        truncation_flags=flags,
        target_height=profile.target_height,
    )


def profile(field: HeightField, target: Vertex, N: int) -> MartingaleProfile:
    """Scale decomposition of phi(target) on a zero-boundary field."""
    if parity(target) != 0:
        raise ValueError("profiles are defined for even targets")
    family = extract_loop_family(field, target)
    sc = circuits_at_scales(family, field, N)
    heights = [0] + sc.heights
    deltas = [heights[k] - heights[k - 1] for k in range(1, len(heights))]
    phi = int(field.value(target))
    base = MartingaleProfile(
        deltas=deltas,
        residual=phi - heights[-1],
        truncated=[0] * len(deltas),
        truncation_flags=[False] * len(deltas),
        target_height=phi,
    )
    return truncate(base, family, N)


def sigma_hat(profiles) -> tuple[float, list[EstimateWithError]]:
    """sqrt of summed per-scale second moments of the increments.

    Returns (sigma, per_scale) where per_scale[k-1] estimates
    E[Delta_k^2] with its standard error.
    """
    profs = list(profiles)
    if len(profs) < 2:
        raise ValueError("need at least 2 profiles")
    K = len(profs[0].deltas)
    if any(len(p.deltas) != K for p in profs):
        raise ValueError("profiles disagree on the number of scales")
    sq = np.asarray([p.deltas for p in profs], dtype=np.float64) ** 2
    n = sq.shape[0]
    means = sq.mean(axis=0)
    errs = sq.std(axis=0, ddof=1) / math.sqrt(n)
    per_scale = [EstimateWithError(float(m), float(e), n) for m, e in zip(means, errs)]
    return float(math.sqrt(means.sum())), per_scale


def _overlap(a: EvenDomain, b: EvenDomain) -> bool:
    x0, x1 = max(a.x0, b.x0), min(a.x0 + a.shape[1], b.x0 + b.shape[1])
    y0, y1 = max(a.y0, b.y0), min(a.y0 + a.shape[0], b.y0 + b.shape[0])
    if x0 >= x1 or y0 >= y1:
        return False
    sa = a.mask[y0 - a.y0:y1 - a.y0, x0 - a.x0:x1 - a.x0]
    sb = b.mask[y0 - b.y0:y1 - b.y0, x0 - b.x0:x1 - b.x0]
    return bool(np.any(sa & sb))


def separation_scale(targets, N: int) -> int:
    """First scale index whose target boxes are pairwise disjoint.

    Depends only on the geometry of the targets, not on any field; a
    single target separates at scale 1 by convention.
    """
    pts = [tuple(t) for t in targets]
    if len(set(pts)) != len(pts):
        raise ValueError("coincident targets")
    if len(pts) == 1:
        return 1
    for m, r in enumerate(scale_radii(N), start=1):
        boxes = [_box(t, r) for t in pts]
        if not any(_overlap(a, b) for i, a in enumerate(boxes)
                   for b in boxes[i + 1:]):
            return m
    raise ValueError("no scale separates the targets inside D_N")


def multipoint_profiles(field: HeightField, targets, N: int) -> MultipointProfile:
    """Per-target profiles with the first scale separating the targets."""
    pts = [tuple(t) for t in targets]
    m0 = separation_scale(pts, N)
    profs = [profile(field, t, N) for t in pts]
    return MultipointProfile(targets=pts, profiles=profs, m0=m0)
