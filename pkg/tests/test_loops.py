"""Loop extraction against a brute-force circuit oracle, plus event tests.

The oracle enumerates every simple diagonal cycle at constant height
that strictly surrounds the target, picks the enclosure-maximal one,
and recurses into its strict interior; it shares no code with the
flood-and-trace extraction beyond elementary geometry helpers.
"""

import numpy as np
import pytest

from icelab.heightfield import HeightField, extremal_field, zero_bc
from icelab.lattice import aligned_mask, annulus_region, build_even_domain
from icelab.loops import (
    LevelLoop,
    LoopExtractionError,
    LoopFamily,
    _canonical,
    _event_geometry,
    _interior_mask,
    _ray_parity,
    _surrounding_cycle,
    annulus_loop_event,
    circuits_at_scales,
    count_in_annulus,
    extract_loop_family,
    outermost_zero_loop,
    scale_radii,
)
from icelab.sampler import cftp_sample, enumerate_uniform

DIAG = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def flat_field(dom):
    """Zero on even cells, one on odd cells: valid, loop-free, all zeros."""
    xs = np.arange(dom.x0, dom.x0 + dom.shape[1])
    ys = np.arange(dom.y0, dom.y0 + dom.shape[0])
    return HeightField(dom, ((xs[None, :] + ys[:, None]) % 2).astype(np.int64))


# -- oracle -------------------------------------------------------------


def canon2(cyc):
    """Rotation- and direction-independent canonical form of a cycle."""
    c = _canonical(list(cyc))
    if len(c) > 2 and (c[-1][1], c[-1][0]) < (c[1][1], c[1][0]):
        c = [c[0]] + c[1:][::-1]
    return tuple(c)


def all_circuits(cells, target):
    """Simple diagonal cycles through `cells` strictly surrounding target."""
    pts = sorted(set(cells) - {target})
    index = {p: i for i, p in enumerate(pts)}
    adj = {p: [q for d in DIAG if (q := (p[0] + d[0], p[1] + d[1])) in index]
           for p in pts}
    out = []
    for si, s in enumerate(pts):
        stack = [(s, [s], {s})]
        while stack:
            cur, path, seen = stack.pop()
            for q in adj[cur]:
                if q == s:
                    if len(path) >= 4 and index[path[1]] < index[path[-1]]:
                        if _ray_parity(path, target):
                            out.append(list(path))
                elif q not in seen and index[q] > si:
                    stack.append((q, path + [q], seen | {q}))
    return out


def _full_mask(cyc, shape, x0, y0):
    m = _interior_mask(cyc, shape, x0, y0)
    for x, y in cyc:
        m[y - y0, x - x0] = True
    return m


def outermost(cands, shape, x0, y0):
    # Same-height circuits may share vertices, so candidates need not be
    # totally ordered a priori; assert a unique enclosure-maximal one.
    masks = [_full_mask(c, shape, x0, y0) for c, _ in cands]
    best = max(range(len(cands)), key=lambda i: int(masks[i].sum()))
    for m in masks:
        assert np.all(~m | masks[best]), "no unique enclosure-maximal circuit"
    return cands[best]


def oracle_family(field, target):
    dom = field.domain
    grid = field.grid
    fam = [(canon2(dom.circuit), 0)]
    inside = dom.mask & ~dom.boundary_mask
    v = 0
    while True:
        cands = []
        for w in (v - 2, v + 2):
            ys, xs = np.nonzero(inside & (grid == w))
            cells = [(int(x) + dom.x0, int(y) + dom.y0) for y, x in zip(ys, xs)]
            for cyc in all_circuits(cells, target):
                cands.append((cyc, w))
        if not cands:
            break
        cyc, w = outermost(cands, dom.shape, dom.x0, dom.y0)
        fam.append((canon2(cyc), w))
        inside = _interior_mask(cyc, dom.shape, dom.x0, dom.y0)
        v = w
    return fam


def oracle_event(field, n):
    dom = field.domain
    _, ann, _, _ = _event_geometry(dom, dom.center, n)
    grid = field.grid
    for level in (2, -2):
        ys, xs = np.nonzero(ann & (grid == level))
        cells = [(int(x) + dom.x0, int(y) + dom.y0) for y, x in zip(ys, xs)]
        if all_circuits(cells, dom.center):
            return True
    return False


def oracle_zero(field, target, region):
    dom = field.domain
    reg = aligned_mask(dom, region.mask, region.x0, region.y0)
    ys, xs = np.nonzero(reg & (field.grid == 0))
    cells = [(int(x) + dom.x0, int(y) + dom.y0) for y, x in zip(ys, xs)]
    cands = [(c, 0) for c in all_circuits(cells, target)]
    if not cands:
        return None
    cyc, _ = outermost(cands, dom.shape, dom.x0, dom.y0)
    return canon2(cyc)


def _compare_all(field, target, event_ns=(), zero_regions=()):
    fam = extract_loop_family(field, target)
    fam.verify(field)
    mine = [(canon2(lp.circuit), lp.height) for lp in fam.loops]
    assert mine == oracle_family(field, target)
    # Negation symmetry: loops of -h are the loops of h with flipped signs.
    neg = extract_loop_family(HeightField(field.domain, -field.grid), target)
    assert [(canon2(lp.circuit), -lp.height) for lp in neg.loops] == mine
    for n in event_ns:
        assert annulus_loop_event(field, n) == oracle_event(field, n)
    for region in zero_regions:
        z = outermost_zero_loop(field, target, region)
        key = None if z is None else canon2(z.circuit)
        assert key == oracle_zero(field, target, region)
    return fam


# -- exhaustive comparisons on enumerable domains ------------------------


@pytest.mark.parametrize("center,radius,stride,want_loops", [
    ((0, 0), 0, 1, False),
    ((1, 0), 1, 1, False),
    ((0, 0), 2, 2, False),
    ((1, 0), 2, 5, True),
])
def test_family_matches_oracle_on_enumerated_fields(center, radius, stride,
                                                    want_loops):
    dom = build_even_domain(center, radius)
    fields = enumerate_uniform(dom, zero_bc(dom))
    event_ns = (1,) if radius >= 2 else ()
    regions = (annulus_region(center, 1, 2),) if radius >= 2 else ()
    proper = 0
    for f in fields[::stride]:
        fam = _compare_all(f, center, event_ns, regions)
        proper += len(fam.loops) - 1
    if want_loops:
        assert proper > 0  # the comparison must exercise nontrivial loops


def test_proper_loop_census_on_radius_two_domains():
    # Around an even center the innermost even-sublattice circuit is the
    # eight-cell diamond through (+-2, 0) and (0, +-2), which touches the
    # boundary of the radius-2 domain; no field there can carry a proper
    # loop.  Around an odd center a four-cell circuit fits, and exactly
    # 64 of the 13888 fields realize it.
    dom = build_even_domain((0, 0), 2)
    counts = [len(extract_loop_family(f, (0, 0)).loops) - 1
              for f in enumerate_uniform(dom, zero_bc(dom))]
    assert sum(counts) == 0
    dom1 = build_even_domain((1, 0), 2)
    counts1 = [len(extract_loop_family(f, (1, 0)).loops) - 1
               for f in enumerate_uniform(dom1, zero_bc(dom1))]
    assert counts1.count(1) == 64
    assert counts1.count(0) == len(counts1) - 64


def test_outermost_zero_loop_on_flat_field():
    # With every even cell at zero the outermost zero circuit in a
    # region is the region's own outer rim, when that rim is a circuit.
    dom = build_even_domain((0, 0), 4)
    f = flat_field(dom)
    z = outermost_zero_loop(f, (0, 0), annulus_region((0, 0), 1, 3))
    want = build_even_domain((0, 0), 3).circuit
    assert z is not None
    assert canon2(z.circuit) == canon2(want)
    assert canon2(z.circuit) == oracle_zero(f, (0, 0),
                                            annulus_region((0, 0), 1, 3))
    # A region containing the whole boundary short-circuits to the
    # domain circuit: the flood has nowhere to start.
    z_all = outermost_zero_loop(f, (0, 0), annulus_region((0, 0), 1, 4))
    assert z_all is not None and z_all.circuit == list(dom.circuit)
    # The radius-2 circuit does not fit in the (1, 2) annulus: its axial
    # extremes fall inside the removed diamond, so nothing is found.
    assert outermost_zero_loop(f, (0, 0), annulus_region((0, 0), 1, 2)) is None
    assert oracle_zero(f, (0, 0), annulus_region((0, 0), 1, 2)) is None
    assert len(extract_loop_family(f, (0, 0)).loops) == 1


# -- randomized comparisons beyond enumerable sizes ----------------------


@pytest.mark.parametrize("radius,n_fields,seed,event_ns,zero_rads", [
    (3, 150, 11, (1,), (1,)),
    (4, 80, 12, (1, 2), (1, 2)),
])
def test_family_matches_oracle_on_sampled_fields(radius, n_fields, seed,
                                                 event_ns, zero_rads):
    dom = build_even_domain((0, 0), radius)
    bc = zero_bc(dom)
    regions = tuple(annulus_region((0, 0), r, 2 * r) for r in zero_rads)
    for i in range(n_fields):
        f = cftp_sample(dom, bc, seed=seed, chain_id=i)
        _compare_all(f, (0, 0), event_ns, regions)


# -- pyramids: deterministic nontrivial families -------------------------


@pytest.mark.parametrize("radius,heights", [
    (3, [0, 2]),
    (4, [0, 2]),
    (5, [0, 2, 4]),
    (6, [0, 2, 4]),
])
def test_pyramid_family_matches_oracle(radius, heights):
    dom = build_even_domain((0, 0), radius)
    f = extremal_field(dom, zero_bc(dom), "max")
    event_ns = (1,) if radius < 4 else (1, 2)
    fam = _compare_all(f, (0, 0), event_ns,
                       (annulus_region((0, 0), 1, 2),))
    assert fam.heights == heights
    hmax = int(f.value((0, 0)))
    assert fam.heights in (list(range(0, hmax + 1, 2)),
                           list(range(0, hmax, 2)))


def test_annulus_loop_event_positive_case():
    # The radius-6 pyramid has its h = 2 ring two steps in from the
    # boundary, inside the annulus between the boxes of radii 2 and 4.
    dom = build_even_domain((0, 0), 6)
    f = extremal_field(dom, zero_bc(dom), "max")
    assert annulus_loop_event(f, 2) is True
    assert oracle_event(f, 2) is True
    assert annulus_loop_event(f, 1) is False
    neg = HeightField(dom, -f.grid)
    assert annulus_loop_event(neg, 2) is True  # |h| = 2 covers both signs
    assert annulus_loop_event(flat_field(dom), 2) is False


def test_annulus_loop_event_needs_room():
    dom = build_even_domain((0, 0), 3)
    f = extremal_field(dom, zero_bc(dom), "max")
    with pytest.raises(ValueError):
        annulus_loop_event(f, 2)  # outer box of radius 4 exceeds the domain


# -- scale circuits ------------------------------------------------------


def test_scale_radii_values():
    assert scale_radii(8) == [4, 2, 1]
    assert scale_radii(16) == [8, 4, 2, 1]
    assert scale_radii(64) == [32, 16, 8, 4, 2, 1]
    assert scale_radii(6) == [3, 1]
    with pytest.raises(ValueError):
        scale_radii(1)


def test_circuits_at_scales_on_pyramid():
    N = 6
    dom = build_even_domain((0, 0), N)
    f = extremal_field(dom, zero_bc(dom), "max")
    fam = extract_loop_family(f, (0, 0))
    sc = circuits_at_scales(fam, f, N)
    assert sc.radii == scale_radii(N)
    # Re-derive each scale's outermost contained loop by brute force.
    for r, lp, idx in zip(sc.radii, sc.circuits, sc.indices):
        box = build_even_domain((0, 0), r)
        contained = [j for j in range(1, len(fam.loops))
                     if box.contains_all(fam.loops[j].circuit)]
        if contained:
            assert idx == contained[0]
        assert lp is fam.loops[idx]
    assert sc.heights == [lp.height for lp in sc.circuits]
    # Scale heights never decrease on the pyramid and end at the top loop.
    assert sc.heights == sorted(sc.heights)


def test_count_in_annulus_on_pyramid():
    dom = build_even_domain((0, 0), 6)
    f = extremal_field(dom, zero_bc(dom), "max")
    fam = extract_loop_family(f, (0, 0))
    for r_in, r_out in ((1, 2), (1, 4), (2, 6), (1, 6)):
        ann = annulus_region((0, 0), r_in, r_out)
        contained, crossing = count_in_annulus(fam, ann)
        exp_contained = exp_crossing = 0
        for lp in fam.loops[1:]:
            inside = [ann.contains(v) for v in lp.circuit]
            if all(inside):
                exp_contained += 1
            elif any(inside):
                exp_crossing += 1
        assert (contained, crossing) == (exp_contained, exp_crossing)


# -- loop and family validation ------------------------------------------


def test_level_loop_surrounds():
    diamond = [(2, 0), (1, 1), (0, 2), (-1, 1), (-2, 0), (-1, -1), (0, -2),
               (1, -1)]
    loop = LevelLoop(diamond, 0)
    assert loop.surrounds((0, 0))
    assert not loop.surrounds((2, 0))   # on the circuit
    assert not loop.surrounds((3, 3))   # outside
    assert loop.surrounds((1, 0))
    assert len(loop) == 8


def test_surrounding_cycle_picks_the_right_lobe():
    left = [(-2, 0), (-1, 1), (0, 0), (-1, -1)]
    right = [(0, 0), (1, 1), (2, 0), (1, -1)]
    # Figure eight pinched at the origin, in traced order: up the left
    # lobe, around the right lobe, back down the left one.
    eight = [(-2, 0), (-1, 1), (0, 0), (1, 1), (2, 0), (1, -1), (0, 0),
             (-1, -1)]
    assert canon2(_surrounding_cycle(eight, (-1, 0))) == canon2(left)
    assert canon2(_surrounding_cycle(eight, (1, 0))) == canon2(right)
    assert _surrounding_cycle(eight, (5, 5)) is None
    # Two nested diamonds around (1, 0) hinged at (2, 0): ambiguous.
    small = [(2, 0), (1, 1), (0, 0), (1, -1)]
    big = [(2, 0), (1, 1), (0, 2), (-1, 1), (-2, 0), (-1, -1), (0, -2),
           (1, -1)]
    with pytest.raises(LoopExtractionError):
        _surrounding_cycle(small + big, (1, 0))


def test_extract_loop_family_validation():
    dom = build_even_domain((0, 0), 2)
    f = extremal_field(dom, zero_bc(dom), "max")
    with pytest.raises(ValueError):
        extract_loop_family(f, (2, 0))  # boundary target
    bad = f.copy()
    bad.grid[0 - dom.y0, 0 - dom.x0] += 2
    with pytest.raises(ValueError):
        extract_loop_family(bad, (0, 0))
    shifted = HeightField(dom, f.grid + 2)
    with pytest.raises(ValueError):
        extract_loop_family(shifted, (0, 0))  # boundary not at zero


def test_family_verify_catches_tampering():
    dom = build_even_domain((0, 0), 4)
    f = extremal_field(dom, zero_bc(dom), "max")
    fam = extract_loop_family(f, (0, 0))
    assert len(fam.loops) >= 2
    tampered = LoopFamily(target=fam.target, loops=[
        LevelLoop(list(lp.circuit), lp.height + 2) for lp in fam.loops])
    with pytest.raises(LoopExtractionError):
        tampered.verify(f)
    headless = LoopFamily(target=fam.target, loops=fam.loops[1:])
    with pytest.raises(LoopExtractionError):
        headless.verify(f)
