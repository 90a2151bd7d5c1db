"""Samplers for the uniform distribution on height fields.

Three routes to the same target measure.  ``enumerate_uniform`` lists
every valid extension of a boundary condition and is the ground truth
on domains small enough to enumerate.  ``cftp_sample`` is an exact
sampler via monotone coupling from the past: the heat-bath update is
monotone in the pointwise partial order when both chains consume the
same update bit, and the extremal extensions bound every field, so
coalescence of the two extremal chains at time zero certifies that the
returned field has exactly the uniform law.  ``glauber_run`` is the
workhorse for large domains: forward heat-bath dynamics with explicit
burn-in and thinning, calibrated from a pilot estimate of the
integrated autocorrelation time of the center height.

Randomness is counter-based throughout (splitmix64 finalizer applied to
a per-chain stream seed plus a sweep/site counter), so runs are
reproducible bit for bit from ``(seed, chain_id)`` alone, chains never
share bits, and the backward sweeps of coupling from the past can be
replayed without storing anything.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import _kernels
from ._mix import derive_seed
from .heightfield import (
    BoundaryCondition,
    HeightField,
    InadmissibleBoundary,
    extremal_field,
)
from .lattice import AXIAL_OFFSETS, EvenDomain, Vertex

__all__ = [
    "ChainState",
    "RunSpec",
    "heat_bath_update",
    "enumerate_uniform",
    "glauber_run",
    "coupled_glauber_run",
    "cftp_sample",
    "autocorrelation_time",
    "calibrate",
]


@dataclass(frozen=True)
class RunSpec:
    """Parameters of a deterministic Glauber run.

    The bit stream is a pure function of (seed, chain_id), so distinct
    chain ids give independent streams and the same spec replayed twice
    yields an identical sample sequence.
    """

    seed: int
    chain_id: int = 0
    burn_in_sweeps: int = 0
    thinning_sweeps: int = 1
    n_samples: int = 1

    def __post_init__(self) -> None:
        for name in ("seed", "chain_id", "burn_in_sweeps", "thinning_sweeps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")


@dataclass(eq=False)
class ChainState:
    """A chain's current field, sweep count, and bit-stream seed."""

    field: HeightField
    sweep_count: int
    rng_stream: int


def heat_bath_update(field: HeightField, v: Vertex, u: int) -> HeightField:
    """One heat-bath update at interior vertex v with update bit u.

    When all four axial neighbors agree at height a the new value is
    a - 1 + 2*u; otherwise the neighbors force a unique value and u is
    ignored.  Returns a new field; the input is untouched.
    """
    if u not in (0, 1):
        raise ValueError("update bit must be 0 or 1")
    if not field.domain.is_interior(v):
        raise ValueError(f"heat-bath update requires an interior vertex, got {v}")
    x, y = v
    vals = [field.value((x + dx, y + dy)) for dx, dy in AXIAL_OFFSETS]
    lo, hi = min(vals), max(vals)
    if hi - lo > 2:
        raise ValueError(f"field is not a valid height function around {v}")
    out = field.copy()
    iy, ix = y - field.domain.y0, x - field.domain.x0
    out.grid[iy, ix] = lo - 1 + 2 * u if lo == hi else (lo + hi) // 2
    return out


# -- enumeration ---------------------------------------------------------


def enumerate_uniform(
    domain: EvenDomain, bc: BoundaryCondition, cap: int = 500_000
) -> list[HeightField]:
    """All valid extensions of bc, in scan-order lexicographic order.

    The search assigns unpinned cells in row-major order, restricting
    each cell to the envelope between the extremal extensions and to
    values adjacent to every already-assigned axial neighbor.  An
    inadmissible boundary condition yields an empty list; exceeding cap
    raises, since a truncated enumeration would be misleading.
    """
    try:
        fmin = extremal_field(domain, bc, "min")
        fmax = extremal_field(domain, bc, "max")
    except InadmissibleBoundary:
        return []
    lo_grid, hi_grid = fmin.grid, fmax.grid

    pinned = np.zeros(domain.shape, dtype=bool)
    grid = np.zeros(domain.shape, dtype=np.int32)
    for v, k in bc.values.items():
        iy, ix = v[1] - domain.y0, v[0] - domain.x0
        pinned[iy, ix] = True
        grid[iy, ix] = k
    ys, xs = np.nonzero(domain.mask & ~pinned)
    order = list(zip(ys.tolist(), xs.tolist()))
    if not order:
        return [HeightField(domain, grid.copy())]

    h, w = domain.shape
    mask = domain.mask
    assigned = pinned.copy()

    def options(iy: int, ix: int) -> list[int]:
        # All bounds share the cell's parity: extremal values live on the
        # cell, and n +/- 1 flips the neighbor's parity back to it.
        lo, hi = int(lo_grid[iy, ix]), int(hi_grid[iy, ix])
        for niy, nix in ((iy + 1, ix), (iy - 1, ix), (iy, ix + 1), (iy, ix - 1)):
            if 0 <= niy < h and 0 <= nix < w and mask[niy, nix] and assigned[niy, nix]:
                n = int(grid[niy, nix])
                lo, hi = max(lo, n - 1), min(hi, n + 1)
        return list(range(lo, hi + 1, 2))

    out: list[HeightField] = []
    depth = 0
    iters: list[Iterator[int]] = [iter(options(*order[0]))]
    while iters:
        iy, ix = order[depth]
        val = next(iters[-1], None)
        if val is None:
            iters.pop()
            assigned[iy, ix] = False
            depth -= 1
            continue
        grid[iy, ix] = val
        assigned[iy, ix] = True
        if depth + 1 == len(order):
            if len(out) >= cap:
                raise ValueError(
                    f"enumeration exceeds cap={cap}; the domain is too large")
            out.append(HeightField(domain, grid.copy()))
            assigned[iy, ix] = False
        else:
            depth += 1
            iters.append(iter(options(*order[depth])))
    return out


# -- site tables for the sweep kernels -----------------------------------


def _site_tables(domain: EvenDomain):
    """Flat interior indices and their four neighbors, in scan order."""
    cached = getattr(domain, "_icelab_tables", None)
    if cached is not None:
        return cached
    h, w = domain.shape
    ys = domain.interior_yx[:, 0] - domain.y0
    xs = domain.interior_yx[:, 1] - domain.x0
    idx = (ys * w + xs).astype(np.int64)
    nu = ((ys + 1) * w + xs).astype(np.int64)
    nd = ((ys - 1) * w + xs).astype(np.int64)
    nl = (ys * w + xs - 1).astype(np.int64)
    nr = (ys * w + xs + 1).astype(np.int64)
    cells = np.flatnonzero(domain.mask.reshape(-1)).astype(np.int64)
    tables = (idx, nu, nd, nl, nr, cells)
    domain._icelab_tables = tables
    return tables


def _require_full_boundary(bc: BoundaryCondition) -> None:
    # The dynamics never touches boundary cells, so any unpinned one
    # would stay frozen at its initial value instead of being resampled.
    if not bc.covers_boundary():
        raise ValueError(
            "sampling dynamics requires boundary values on every boundary vertex")


def _start_arrays(
    domain: EvenDomain, bc: BoundaryCondition, which: str
) -> np.ndarray:
    # CFTP recomputes both extremal extensions every epoch and every draw;
    # cache them on the boundary condition so repeated exact draws on the
    # same (domain, bc) pair cost two Dijkstra passes total, not two each.
    cached = getattr(bc, "_icelab_extremal", None)
    if cached is None:
        cached = {}
        bc._icelab_extremal = cached
    if which not in cached:
        cached[which] = extremal_field(domain, bc, which).grid.reshape(-1)
    return cached[which].copy()


# -- forward dynamics ----------------------------------------------------


def glauber_run(
    domain: EvenDomain, bc: BoundaryCondition, run: RunSpec
) -> Iterator[HeightField]:
    """Heat-bath samples from the maximal extension, burn-in then thinning."""
    _require_full_boundary(bc)
    idx, nu, nd, nl, nr, _ = _site_tables(domain)
    h = _start_arrays(domain, bc, "max")
    seed = np.uint64(derive_seed(run.seed, run.chain_id))
    key = 0
    if run.burn_in_sweeps:
        _kernels.run_sweeps(h, idx, nu, nd, nl, nr, seed, key, run.burn_in_sweeps)
        key += run.burn_in_sweeps
    shape = domain.shape
    for _ in range(run.n_samples):
        if run.thinning_sweeps:
            _kernels.run_sweeps(h, idx, nu, nd, nl, nr, seed, key,
                                run.thinning_sweeps)
            key += run.thinning_sweeps
        yield HeightField(domain, h.reshape(shape).copy())


def coupled_glauber_run(
    domain: EvenDomain,
    bc_low: BoundaryCondition,
    bc_high: BoundaryCondition,
    run: RunSpec,
) -> Iterator[tuple[HeightField, HeightField]]:
    """Two chains driven by one bit stream, one per boundary condition.

    Requires bc_low <= bc_high pointwise; monotonicity of the shared-bit
    update then keeps the chains ordered forever, which is checked on
    every emitted pair.
    """
    _require_full_boundary(bc_low)
    _require_full_boundary(bc_high)
    for v, k in bc_low.values.items():
        if k > bc_high.values[v]:
            raise ValueError(
                f"boundary conditions are not ordered at {v}: {k} > {bc_high.values[v]}")
    idx, nu, nd, nl, nr, cells = _site_tables(domain)
    h_lo = _start_arrays(domain, bc_low, "max")
    h_hi = _start_arrays(domain, bc_high, "max")
    seed = np.uint64(derive_seed(run.seed, run.chain_id))
    key = 0
    if run.burn_in_sweeps:
        _kernels.run_pair_sweeps(h_lo, h_hi, idx, nu, nd, nl, nr, seed, key,
                                 run.burn_in_sweeps)
        key += run.burn_in_sweeps
    shape = domain.shape
    for _ in range(run.n_samples):
        if run.thinning_sweeps:
            _kernels.run_pair_sweeps(h_lo, h_hi, idx, nu, nd, nl, nr, seed, key,
                                     run.thinning_sweeps)
            key += run.thinning_sweeps
        if not np.all(h_lo[cells] <= h_hi[cells]):
            raise AssertionError("coupled chains lost their pointwise order")
        yield (HeightField(domain, h_lo.reshape(shape).copy()),
               HeightField(domain, h_hi.reshape(shape).copy()))


# -- exact sampling ------------------------------------------------------


def cftp_sample(
    domain: EvenDomain,
    bc: BoundaryCondition,
    seed: int,
    chain_id: int = 0,
    t_cap: int = 1 << 20,
) -> HeightField:
    """Exact uniform sample by monotone coupling from the past.

    Runs the extremal chains from times -T with T doubling until they
    coalesce at time zero; the sweep at time -s always replays the same
    bits regardless of T.  Raises RuntimeError if the chains have not
    coalesced within t_cap sweeps.
    """
    _require_full_boundary(bc)
    idx, nu, nd, nl, nr, cells = _site_tables(domain)
    stream = np.uint64(derive_seed(seed, chain_id))
    epoch = 1
    while epoch <= t_cap:
        h_lo = _start_arrays(domain, bc, "min")
        h_hi = _start_arrays(domain, bc, "max")
        _kernels.run_pair_epoch(h_lo, h_hi, idx, nu, nd, nl, nr, stream, epoch)
        if np.array_equal(h_lo[cells], h_hi[cells]):
            return HeightField(domain, h_hi.reshape(domain.shape).copy())
        epoch *= 2
    raise RuntimeError(
        f"chains not coalesced within t_cap={t_cap} sweeps; raise the cap")


# -- calibration ---------------------------------------------------------


def autocorrelation_time(series: np.ndarray, c: float = 6.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window.

    Returns tau such that var(mean) ~ tau * var / n; tau >= 0.5 with
    equality for white noise (convention: tau = 1/2 + sum of the
    autocorrelations).  Short or constant series fall back to 0.5.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n < 8 or np.ptp(x) == 0.0:
        return 0.5
    x = x - x.mean()
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    if acov[0] <= 0:
        return 0.5
    rho = acov / acov[0]
    tau = 0.5
    for t in range(1, n):
        tau += rho[t]
        if t >= c * tau:
            break
    return float(max(tau, 0.5))


def calibrate(
    domain: EvenDomain,
    bc: BoundaryCondition,
    seed: int,
    pilot_sweeps: int | None = None,
) -> dict[str, int]:
    """Pilot run fixing burn-in and thinning for glauber_run.

    Tracks the center height over a pilot chain, estimates its
    integrated autocorrelation time tau, and returns
    thinning = ceil(5 tau) and burn_in = max(ceil(10 tau), 3 N^2); the
    N^2 floor covers the worst-case relaxation from the extremal start.
    """
    _require_full_boundary(bc)
    idx, nu, nd, nl, nr, _ = _site_tables(domain)
    n = domain.radius if domain.radius > 0 else 2
    if pilot_sweeps is None:
        pilot_sweeps = max(200 * n * n, 4000)
    h = _start_arrays(domain, bc, "max")
    stream = np.uint64(derive_seed(seed, 0))
    probe = int((domain.center[1] - domain.y0) * domain.shape[1]
                + (domain.center[0] - domain.x0))
    warm = 3 * n * n
    _kernels.run_sweeps(h, idx, nu, nd, nl, nr, stream, 0, warm)
    series = _kernels.probe_series(h, idx, nu, nd, nl, nr, stream, warm,
                                   pilot_sweeps, probe)
    tau = autocorrelation_time(series)
    thinning = int(np.ceil(5.0 * tau))
    burn_in = max(int(np.ceil(10.0 * tau)), 3 * n * n)
    return {"iat_sweeps": int(np.ceil(tau)), "thinning_sweeps": thinning,
            "burn_in_sweeps": burn_in, "pilot_sweeps": int(pilot_sweeps)}
