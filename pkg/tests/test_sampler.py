"""Enumeration against independent oracles, kernels, CFTP, calibration."""

import itertools
from collections import defaultdict

import numpy as np
import pytest
from scipy.stats import chisquare

from icelab._mix import counter_bit, derive_seed, mix64
from icelab.heightfield import (
    BoundaryCondition,
    HeightField,
    constant_bc,
    extremal_field,
    validate,
    zero_bc,
)
from icelab.lattice import build_even_domain
from icelab.sampler import (
    RunSpec,
    _site_tables,
    autocorrelation_time,
    calibrate,
    cftp_sample,
    coupled_glauber_run,
    enumerate_uniform,
    glauber_run,
    heat_bath_update,
)

# Extension counts of the four enumerable reference domains, frozen from
# the two independent oracles below.
REFERENCE_COUNTS = {
    ((0, 0), 0): 18,
    ((1, 0), 1): 32,
    ((0, 0), 2): 7812,
    ((1, 0), 2): 13888,
}


def _count_by_rows(dom, bc):
    """Transfer-style count: enumerate rows, chain them through a DP.

    Independent of the cell-by-cell backtracking in enumerate_uniform;
    only the extremal envelope is shared.
    """
    fmin = extremal_field(dom, bc, "min")
    fmax = extremal_field(dom, bc, "max")
    pinned = dict(bc.values)
    rows: dict[int, list[int]] = defaultdict(list)
    for x, y in dom.cells():
        rows[y].append(x)

    def row_assignments(y):
        xs = sorted(rows[y])
        out = []

        def rec(i, cur):
            if i == len(xs):
                out.append(tuple(cur))
                return
            v = (xs[i], y)
            opts = ([pinned[v]] if v in pinned
                    else range(fmin.value(v), fmax.value(v) + 1, 2))
            for h in opts:
                if i > 0 and xs[i - 1] == xs[i] - 1 and abs(h - cur[-1]) != 1:
                    continue
                cur.append(h)
                rec(i + 1, cur)
                cur.pop()

        rec(0, [])
        return xs, out

    counts = None
    prev_xs: list[int] = []
    for y in sorted(rows):
        xs, states = row_assignments(y)
        if counts is None:
            counts = {s: 1 for s in states}
        else:
            shared = [(i, prev_xs.index(x)) for i, x in enumerate(xs)
                      if x in prev_xs]
            new: dict[tuple, int] = defaultdict(int)
            for t in states:
                for s, c in counts.items():
                    if all(abs(t[i] - s[j]) == 1 for i, j in shared):
                        new[t] += c
            counts = dict(new)
        prev_xs = xs
    return sum(counts.values())


def _fields_by_product(dom, bc):
    """All extensions by brute product over the extremal envelopes."""
    fmin = extremal_field(dom, bc, "min")
    fmax = extremal_field(dom, bc, "max")
    free = [v for v in dom.cells() if v not in bc.values]
    options = [range(fmin.value(v), fmax.value(v) + 1, 2) for v in free]
    out = []
    for combo in itertools.product(*options):
        grid = np.zeros(dom.shape, dtype=np.int32)
        for v, k in bc.values.items():
            grid[v[1] - dom.y0, v[0] - dom.x0] = k
        for v, h in zip(free, combo):
            grid[v[1] - dom.y0, v[0] - dom.x0] = h
        f = HeightField(dom, grid)
        if not validate(f):
            out.append(f)
    return out


@pytest.mark.parametrize("center,radius", list(REFERENCE_COUNTS))
def test_enumeration_count_matches_row_oracle(center, radius):
    dom = build_even_domain(center, radius)
    bc = zero_bc(dom)
    fields = enumerate_uniform(dom, bc)
    assert len(fields) == REFERENCE_COUNTS[(center, radius)]
    assert _count_by_rows(dom, bc) == len(fields)
    keys = [tuple(f.cell_values()) for f in fields]
    assert len(set(keys)) == len(keys)
    assert keys == sorted(keys)  # scan-order lexicographic
    for f in fields[:: max(1, len(fields) // 50)]:
        assert validate(f) == []


@pytest.mark.parametrize("center,radius", [((0, 0), 0), ((1, 0), 1)])
def test_enumeration_matches_product_oracle(center, radius):
    dom = build_even_domain(center, radius)
    bc = zero_bc(dom)
    mine = {tuple(f.cell_values()) for f in enumerate_uniform(dom, bc)}
    brute = {tuple(f.cell_values()) for f in _fields_by_product(dom, bc)}
    assert mine == brute


def test_enumeration_nonzero_levels_shift():
    dom = build_even_domain((0, 0), 0)
    base = [tuple(f.cell_values()) for f in enumerate_uniform(dom, zero_bc(dom))]
    for level in (2, -4):
        shifted = [tuple(f.cell_values())
                   for f in enumerate_uniform(dom, constant_bc(dom, level))]
        assert shifted == [tuple(h + level for h in key) for key in base]


def test_enumeration_edge_cases():
    dom = build_even_domain((0, 0), 2)
    with pytest.raises(ValueError):
        enumerate_uniform(dom, zero_bc(dom), cap=100)
    # Inadmissible full-boundary condition: one spike the Lipschitz
    # bound cannot reach.
    values = {v: 0 for v in dom.boundary_set}
    values[dom.circuit[0]] = 6
    assert enumerate_uniform(dom, BoundaryCondition(dom, values)) == []
    # Fully pinned domain (no interior left unassigned by bc + envelope).
    odd = build_even_domain((1, 0), 0)
    fields = enumerate_uniform(odd, zero_bc(odd))
    assert len(fields) == 2  # single interior cell at +-1


def test_heat_bath_update_semantics():
    dom = build_even_domain((0, 0), 0)
    f = extremal_field(dom, zero_bc(dom), "max")  # all four neighbors of 0 at 1
    up = heat_bath_update(f, (0, 0), 1)
    dn = heat_bath_update(f, (0, 0), 0)
    assert up.value((0, 0)) == 2 and dn.value((0, 0)) == 0
    assert f.value((0, 0)) == 2  # input untouched
    # Disagreeing neighbors ((0,0) at 2, the rest at 0) force the value.
    forced0 = heat_bath_update(f, (1, 0), 0)
    forced1 = heat_bath_update(f, (1, 0), 1)
    assert forced0.value((1, 0)) == forced1.value((1, 0)) == 1
    with pytest.raises(ValueError):
        heat_bath_update(f, (0, 0), 2)
    with pytest.raises(ValueError):
        heat_bath_update(f, (2, 0), 1)  # boundary vertex


def test_run_spec_validation():
    with pytest.raises(ValueError):
        RunSpec(seed=-1)
    with pytest.raises(ValueError):
        RunSpec(seed=0, n_samples=0)
    with pytest.raises(ValueError):
        RunSpec(seed=0, thinning_sweeps=-2)


def _python_reference_sweeps(dom, bc, seed, chain_id, n_sweeps):
    """Scan-order heat-bath sweeps in pure Python, bit-identical contract."""
    stream = derive_seed(seed, chain_id)
    g = extremal_field(dom, bc, "max").grid.reshape(-1).copy()
    idx, nu, nd, nl, nr, _ = _site_tables(dom)
    n = len(idx)
    for s in range(n_sweeps):
        for i in range(n):
            vals = (g[nu[i]], g[nd[i]], g[nl[i]], g[nr[i]])
            lo, hi = min(vals), max(vals)
            if lo == hi:
                g[idx[i]] = lo - 1 + 2 * counter_bit(stream, s * n + i)
            else:
                g[idx[i]] = (lo + hi) // 2
    return g.reshape(dom.shape)


def test_kernel_sweeps_match_python_reference():
    dom = build_even_domain((0, 0), 2)
    bc = zero_bc(dom)
    for chain_id in (0, 7):
        spec = RunSpec(seed=42, chain_id=chain_id, burn_in_sweeps=0,
                       thinning_sweeps=5, n_samples=1)
        kernel = next(glauber_run(dom, bc, spec))
        ref = _python_reference_sweeps(dom, bc, 42, chain_id, 5)
        assert np.array_equal(kernel.grid[dom.mask], ref[dom.mask])


def test_counter_bit_matches_mix64():
    for stream, counter in ((0, 0), (12345, 9), (2**63, 2**20)):
        golden = 0x9E3779B97F4A7C15
        expect = mix64((stream + counter * golden) % 2**64) >> 63
        assert counter_bit(stream, counter) == expect
        assert counter_bit(stream, counter) in (0, 1)


def test_glauber_run_is_deterministic_and_streams_differ():
    dom = build_even_domain((0, 0), 3)
    bc = zero_bc(dom)
    spec = RunSpec(seed=5, chain_id=1, burn_in_sweeps=30, thinning_sweeps=7,
                   n_samples=4)
    a = [f.cell_values() for f in glauber_run(dom, bc, spec)]
    b = [f.cell_values() for f in glauber_run(dom, bc, spec)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    other = RunSpec(seed=5, chain_id=2, burn_in_sweeps=30, thinning_sweeps=7,
                    n_samples=4)
    c = [f.cell_values() for f in glauber_run(dom, bc, other)]
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))
    for f in glauber_run(dom, bc, RunSpec(seed=5, burn_in_sweeps=0,
                                          thinning_sweeps=1, n_samples=3)):
        assert validate(f) == []


def test_glauber_thinning_composes():
    # One run with thinning 6 equals every third sample of thinning 2.
    dom = build_even_domain((0, 0), 2)
    bc = zero_bc(dom)
    coarse = [f.cell_values() for f in glauber_run(
        dom, bc, RunSpec(seed=11, thinning_sweeps=6, n_samples=3))]
    fine = [f.cell_values() for f in glauber_run(
        dom, bc, RunSpec(seed=11, thinning_sweeps=2, n_samples=9))]
    for k in range(3):
        assert np.array_equal(coarse[k], fine[3 * k + 2])


def test_coupled_run_keeps_order():
    dom = build_even_domain((0, 0), 3)
    lo_bc = zero_bc(dom)
    hi_bc = constant_bc(dom, 2)
    spec = RunSpec(seed=9, burn_in_sweeps=10, thinning_sweeps=3, n_samples=6)
    pairs = list(coupled_glauber_run(dom, lo_bc, hi_bc, spec))
    assert len(pairs) == 6
    for lo, hi in pairs:
        assert validate(lo) == [] and validate(hi) == []
        assert np.all(lo.grid[dom.mask] <= hi.grid[dom.mask])
    with pytest.raises(ValueError):
        next(coupled_glauber_run(dom, hi_bc, lo_bc, spec))


def test_cftp_is_deterministic_and_uniform():
    dom = build_even_domain((0, 0), 0)
    bc = zero_bc(dom)
    a = cftp_sample(dom, bc, seed=21, chain_id=5)
    b = cftp_sample(dom, bc, seed=21, chain_id=5)
    assert a.same_as(b)
    keys = [tuple(cftp_sample(dom, bc, seed=21, chain_id=i).cell_values())
            for i in range(2000)]
    counts = defaultdict(int)
    for k in keys:
        counts[k] += 1
    assert len(counts) == 18
    _, p = chisquare(list(counts.values()))
    assert p > 1e-4
    with pytest.raises(RuntimeError):
        cftp_sample(dom, bc, seed=21, chain_id=0, t_cap=0)


def test_glauber_equilibrium_on_minimal_domain():
    dom = build_even_domain((0, 0), 0)
    bc = zero_bc(dom)
    spec = RunSpec(seed=13, burn_in_sweeps=60, thinning_sweeps=12,
                   n_samples=3000)
    counts = defaultdict(int)
    for f in glauber_run(dom, bc, spec):
        counts[tuple(f.cell_values())] += 1
    assert len(counts) == 18
    _, p = chisquare(list(counts.values()))
    assert p > 1e-4


def test_autocorrelation_time_known_processes():
    rng = np.random.default_rng(3)
    white = rng.normal(size=100_000)
    assert abs(autocorrelation_time(white) - 0.5) < 0.15
    rho = 0.8
    ar = np.empty(100_000)
    ar[0] = 0.0
    eps = rng.normal(size=100_000)
    for t in range(1, ar.size):
        ar[t] = rho * ar[t - 1] + eps[t]
    tau = autocorrelation_time(ar)
    # Exact integrated time 1/2 + rho/(1-rho) = 4.5.
    assert 3.4 < tau < 5.6
    assert autocorrelation_time(np.ones(5000)) == 0.5
    assert autocorrelation_time(np.arange(4)) == 0.5


def test_calibrate_outputs():
    dom = build_even_domain((0, 0), 3)
    bc = zero_bc(dom)
    out = calibrate(dom, bc, seed=7, pilot_sweeps=2000)
    assert set(out) == {"iat_sweeps", "thinning_sweeps", "burn_in_sweeps",
                        "pilot_sweeps"}
    assert out["burn_in_sweeps"] >= 3 * 9
    assert out["thinning_sweeps"] >= 1
    assert out == calibrate(dom, bc, seed=7, pilot_sweeps=2000)
    assert out != calibrate(dom, bc, seed=8, pilot_sweeps=2000)


def test_sampling_requires_full_boundary():
    dom = build_even_domain((0, 0), 2)
    v = next(iter(dom.boundary_set))
    partial = BoundaryCondition(dom, {v: 0})
    with pytest.raises(ValueError):
        next(glauber_run(dom, partial, RunSpec(seed=0)))
    with pytest.raises(ValueError):
        cftp_sample(dom, partial, seed=0)
    with pytest.raises(ValueError):
        calibrate(dom, partial, seed=0, pilot_sweeps=100)
