"""Level loops of a height field: nested families and scale circuits.

A level loop is a simple closed ×-circuit on which the field is
constant; since a constant height fixes the vertex parity, such
circuits live on one sublattice and every step is diagonal.  Around an
interior target vertex, the loops with consecutive heights differing by
2 form a nested family starting from the domain boundary (height 0
under the zero boundary condition).

Extraction works inward.  Given the current loop at height v, explore
by axial steps through vertices with |h - v| <= 1; the target's
×-component of the unexplored remainder is bounded by cells at height
exactly v + 2 or v - 2 (an axial neighbor of the explored set differs
by at most 1 from a height in [v-1, v+1], and the sign is constant
along the interface because ×-adjacent cells cannot differ by 4).
Tracing the wall contour of that component and keeping the simple
cycle that strictly surrounds the target yields the next loop.  Rather
than arguing the construction equals the set-theoretic "outermost
loop" definition through planar duality, every output is certified:
constant height, simple, closed with diagonal steps, strictly
surrounding the target, and strictly inside its predecessor.  A
certification failure raises instead of returning a wrong loop.

The exploration must be axial, not ×: an axial unit segment can cross
a circuit polygon only at a shared vertex (a transversal crossing
would happen at a non-lattice point), and the circuit's cells sit at
|h - v| = 2, outside the explored band, so the flood can never leak
past a surrounding loop.  A diagonal step can cross a constant-height
circuit through a plaquette whose transversal pair sits at the
intermediate odd height, which is why ×-exploration would overrun the
outermost loop.  Constant-height circuits of one field, by the same
plaquette argument, can never cross each other transversally, so the
surrounding ones are totally ordered by enclosure and "outermost" is
well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

from . import _kernels
from ._trace import split_simple_cycles, trace_contour_flanks
from .heightfield import HeightField, validate
from .lattice import (
    DIAGONAL_OFFSETS,
    EvenDomain,
    Region,
    Vertex,
    aligned_mask,
    build_even_domain,
)

__all__ = [
    "LevelLoop",
    "LoopFamily",
    "ScaleCircuits",
    "LoopExtractionError",
    "extract_loop_family",
    "circuits_at_scales",
    "scale_radii",
    "count_in_annulus",
    "outermost_zero_loop",
    "annulus_loop_event",
]


class LoopExtractionError(RuntimeError):
    """An extracted candidate failed its certificates."""


def _canonical(circuit: list[Vertex]) -> list[Vertex]:
    # Rotate the cyclic order to start at the lexicographically smallest
    # (y, x) vertex so equal loops compare equal.
    k = min(range(len(circuit)), key=lambda i: (circuit[i][1], circuit[i][0]))
    return circuit[k:] + circuit[:k]


def _ray_parity(circuit: list[Vertex], pt: Vertex) -> bool:
    """Strictly-inside test by crossing parity; pt must not lie on the circuit.

    Counts circuit edges crossing the ray {(t, y) : t > x} with the
    half-open rule [min y, max y); all edges have |dy| <= 1, so an edge
    crossing the ray does so at one of its endpoints' x coordinates.
    """
    x, y = pt
    inside = False
    n = len(circuit)
    for a in range(n):
        x1, y1 = circuit[a]
        x2, y2 = circuit[(a + 1) % n]
        if y2 - y1 == 1:
            if y == y1 and x1 > x:
                inside = not inside
        elif y1 - y2 == 1:
            if y == y2 and x2 > x:
                inside = not inside
    return inside


def _interior_mask(
    circuit: list[Vertex], shape: tuple[int, int], x0: int, y0: int
) -> np.ndarray:
    """Grid mask of lattice points strictly enclosed by the circuit."""
    h, w = shape
    rows: dict[int, list[int]] = {}
    n = len(circuit)
    for a in range(n):
        x1, y1 = circuit[a]
        x2, y2 = circuit[(a + 1) % n]
        if y2 - y1 == 1:
            rows.setdefault(y1, []).append(x1)
        elif y1 - y2 == 1:
            rows.setdefault(y2, []).append(x2)
    out = np.zeros(shape, dtype=bool)
    for y, xs in rows.items():
        iy = y - y0
        if not 0 <= iy < h:
            continue
        xs.sort()
        for k in range(0, len(xs) - 1, 2):
            lo = xs[k] + 1 - x0
            hi = xs[k + 1] - x0
            if hi > lo:
                out[iy, max(lo, 0):min(hi, w)] = True
    for cx, cy in circuit:
        if 0 <= cy - y0 < h and 0 <= cx - x0 < w:
            out[cy - y0, cx - x0] = False
    return out


@dataclass(eq=False)
class LevelLoop:
    """A simple closed ×-circuit with a constant field value."""

    circuit: list[Vertex]
    height: int
    vertex_set: frozenset = dc_field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.vertex_set = frozenset(self.circuit)

    def __len__(self) -> int:
        return len(self.circuit)

    def surrounds(self, pt: Vertex) -> bool:
        """True when pt lies strictly inside the circuit polygon."""
        if pt in self.vertex_set:
            return False
        return _ray_parity(self.circuit, pt)

    def interior_mask(self, domain: EvenDomain) -> np.ndarray:
        return _interior_mask(self.circuit, domain.shape, domain.x0, domain.y0)


@dataclass(eq=False)
class LoopFamily:
    """Nested level loops around a target, outermost (the boundary) first."""

    target: Vertex
    loops: list[LevelLoop]

    @property
    def heights(self) -> list[int]:
        return [lp.height for lp in self.loops]

    def verify(self, field: HeightField) -> None:
        """Recheck all family invariants against the field; raises on failure."""
        dom = field.domain
        if self.loops[0].circuit != dom.circuit or self.loops[0].height != 0:
            raise LoopExtractionError("family must start at the domain boundary")
        inside = dom.mask & ~dom.boundary_mask
        for j, lp in enumerate(self.loops):
            _certify_loop(lp, field, self.target)
            if j == 0:
                continue
            if abs(lp.height - self.loops[j - 1].height) != 2:
                raise LoopExtractionError(f"height step at loop {j} is not 2")
            for x, y in lp.circuit:
                if not inside[y - dom.y0, x - dom.x0]:
                    raise LoopExtractionError(
                        f"loop {j} is not strictly inside loop {j - 1}")
            inside = lp.interior_mask(dom)


@dataclass(eq=False)
class ScaleCircuits:
    """Per-scale outermost family loops C_1..C_K inside dyadic boxes.

    radii[k-1] = max(1, floor(N / 2^k)); circuits[k-1] is the outermost
    family loop contained in the box of that radius around the target,
    repeating the previous circuit (outward to the boundary loop) when
    the box contains none.  indices[k-1] is the loop's position in the
    family, 0 meaning the boundary.
    """

    target: Vertex
    N: int
    radii: list[int]
    circuits: list[LevelLoop]
    heights: list[int]
    indices: list[int]

    @property
    def K(self) -> int:
        return len(self.radii)


def _certify_loop(loop: LevelLoop, field: HeightField, target: Vertex) -> None:
    circuit = loop.circuit
    if len(circuit) < 4:
        raise LoopExtractionError(f"circuit of length {len(circuit)} cannot surround")
    if len(loop.vertex_set) != len(circuit):
        raise LoopExtractionError("circuit repeats a vertex")
    for a in range(len(circuit)):
        x1, y1 = circuit[a]
        x2, y2 = circuit[(a + 1) % len(circuit)]
        if (x2 - x1, y2 - y1) not in DIAGONAL_OFFSETS:
            raise LoopExtractionError(
                f"step {circuit[a]} -> {circuit[(a + 1) % len(circuit)]} is not diagonal")
    for v in circuit:
        if field.value(v) != loop.height:
            raise LoopExtractionError(
                f"height {field.value(v)} at {v} differs from loop height {loop.height}")
    if not loop.surrounds(target):
        raise LoopExtractionError(f"circuit does not strictly surround {target}")


def _flat_indices(dom: EvenDomain, vertices: list[Vertex]) -> np.ndarray:
    w = dom.shape[1]
    return np.asarray(
        [(y - dom.y0) * w + (x - dom.x0) for x, y in vertices], dtype=np.int64)


def _flood_mask(allowed: np.ndarray, seeds: np.ndarray, diag: bool) -> np.ndarray:
    w = allowed.shape[1]
    vis = _kernels.flood(
        np.ascontiguousarray(allowed.reshape(-1)).astype(np.uint8), seeds, w, diag)
    return vis.reshape(allowed.shape).astype(bool)


def _surrounding_cycle(
    walk: list[Vertex], target: Vertex
) -> list[Vertex] | None:
    """The unique simple cycle of the walk strictly surrounding target."""
    hits = []
    for cyc in split_simple_cycles(walk):
        if target not in cyc and _ray_parity(cyc, target):
            hits.append(cyc)
    if len(hits) > 1:
        raise LoopExtractionError("interface produced several surrounding cycles")
    return hits[0] if hits else None


def extract_loop_family(field: HeightField, target: Vertex) -> LoopFamily:
    """The nested family of level loops around target, boundary first.

    Requires a valid field with the zero boundary condition and an
    interior target.  Deterministic: equal fields give equal families.
    """
    dom = field.domain
    bad = validate(field)
    if bad:
        raise ValueError(f"invalid height field: {bad[0]}")
    if not dom.is_interior(target):
        raise ValueError(f"target {target} must be an interior vertex")
    for v in dom.circuit:
        if field.value(v) != 0:
            raise ValueError("loop extraction requires the zero boundary condition")

    grid = field.grid
    tx, ty = target[0] - dom.x0, target[1] - dom.y0
    loops = [LevelLoop(list(dom.circuit), 0)]
    inside = dom.mask & ~dom.boundary_mask
    while True:
        prev = loops[-1]
        v = prev.height
        circ_mask = np.zeros(dom.shape, dtype=bool)
        fl = _flat_indices(dom, prev.circuit)
        circ_mask.reshape(-1)[fl] = True
        # Axial flood only: a diagonal step could slip across the next loop
        # through a plaquette whose transversal pair sits at v - 1 or v + 1.
        allowed = (inside | circ_mask) & (np.abs(grid.astype(np.int64) - v) <= 1)
        explored = _flood_mask(allowed, fl, diag=False)
        if explored[ty, tx]:
            break
        remainder = inside & ~explored
        tflat = np.asarray([ty * dom.shape[1] + tx], dtype=np.int64)
        comp = _flood_mask(remainder, tflat, diag=True)
        left, _ = trace_contour_flanks(comp)
        walk = [(dom.x0 + j, dom.y0 + i) for i, j in left]
        cyc = _surrounding_cycle(walk, target)
        if cyc is None:
            break
        loop = LevelLoop(_canonical(cyc), int(field.value(cyc[0])))
        _certify_loop(loop, field, target)
        if abs(loop.height - v) != 2:
            raise LoopExtractionError(
                f"interface height {loop.height} is not v +/- 2 from {v}")
        for x, y in loop.circuit:
            if not inside[y - dom.y0, x - dom.x0]:
                raise LoopExtractionError("loop leaves the predecessor's interior")
        new_inside = _interior_mask(loop.circuit, dom.shape, dom.x0, dom.y0)
        if np.any(new_inside & ~inside):
            raise LoopExtractionError("interior is not nested in the predecessor's")
        loops.append(loop)
        inside = new_inside
    return LoopFamily(target=target, loops=loops)


@lru_cache(maxsize=4096)
def _box(center: Vertex, radius: int) -> EvenDomain:
    return build_even_domain(center, radius)


def scale_radii(N: int) -> list[int]:
    """Dyadic radii r_k = max(1, floor(N/2^k)) for k = 1..floor(log2 N)."""
    if N < 2:
        raise ValueError("N must be at least 2")
    K = int(math.floor(math.log2(N)))
    return [max(1, N >> k) for k in range(1, K + 1)]


def circuits_at_scales(family: LoopFamily, field: HeightField, N: int) -> ScaleCircuits:
    """Outermost family loops contained in the dyadic boxes B_k(target).

    When a box contains no family loop the previous scale's circuit is
    reused (scale 0 being the domain boundary), so consecutive heights
    always telescope exactly.
    """
    radii = scale_radii(N)
    target = family.target
    circuits: list[LevelLoop] = []
    heights: list[int] = []
    indices: list[int] = []
    cur = family.loops[0]
    cur_idx = 0
    j = 1
    for r in radii:
        box = _box(target, r)
        while j < len(family.loops):
            if box.contains_all(family.loops[j].circuit):
                cur = family.loops[j]
                cur_idx = j
                break
            j += 1
        circuits.append(cur)
        heights.append(cur.height)
        indices.append(cur_idx)
    return ScaleCircuits(target=target, N=N, radii=radii, circuits=circuits,
                         heights=heights, indices=indices)


def _membership_count(region: Region, circuit: list[Vertex]) -> int:
    xs = np.asarray([v[0] for v in circuit]) - region.x0
    ys = np.asarray([v[1] for v in circuit]) - region.y0
    h, w = region.mask.shape
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    n = 0
    if ok.any():
        n = int(region.mask[ys[ok], xs[ok]].sum())
    return n


def count_in_annulus(family: LoopFamily, ann: Region) -> tuple[int, int]:
    """(contained, crossing) counts of proper family loops in the region.

    The anchor loop L_0 (the domain boundary) is not counted.
    contained counts loops with every vertex in the region; crossing
    counts loops meeting the region without being contained.
    """
    contained = crossing = 0
    for lp in family.loops[1:]:
        n = _membership_count(ann, lp.circuit)
        if n == len(lp.circuit):
            contained += 1
        elif n > 0:
            crossing += 1
    return contained, crossing


def outermost_zero_loop(
    field: HeightField, target: Vertex, region: Region
) -> LevelLoop | None:
    """Outermost constant-zero ×-circuit in the region surrounding target.

    Found by an axial flood from the domain boundary that treats
    region cells at height zero as barriers: the interface of the
    target's unreached component is the outermost such circuit.
    Returns None when no certified circuit exists.
    """
    dom = field.domain
    if not dom.contains(target):
        raise ValueError(f"target {target} is not a cell of the domain")
    reg = aligned_mask(dom, region.mask, region.x0, region.y0)
    barrier = reg & (field.grid == 0)
    if not barrier.any():
        return None
    allowed = dom.mask & ~barrier
    seeds = np.flatnonzero((dom.boundary_mask & allowed).reshape(-1))
    if seeds.size == 0:
        # The whole boundary is a zero circuit inside the region.
        loop = LevelLoop(list(dom.circuit), 0)
        return loop if loop.surrounds(target) else None
    reached = _flood_mask(allowed, seeds, diag=False)
    tx, ty = target[0] - dom.x0, target[1] - dom.y0
    if reached[ty, tx]:
        return None
    comp_allowed = dom.mask & ~reached
    tflat = np.asarray([ty * dom.shape[1] + tx], dtype=np.int64)
    comp = _flood_mask(comp_allowed, tflat, diag=False)
    left, _ = trace_contour_flanks(comp)
    walk = [(dom.x0 + j, dom.y0 + i) for i, j in left]
    cyc = _surrounding_cycle(walk, target)
    if cyc is None:
        return None
    loop = LevelLoop(_canonical(cyc), 0)
    _certify_loop(loop, field, target)
    for v in loop.circuit:
        if not reg[v[1] - dom.y0, v[0] - dom.x0]:
            raise LoopExtractionError(f"zero loop leaves the region at {v}")
    return loop


def _event_geometry(dom: EvenDomain, center: Vertex, n: int):
    cache = getattr(dom, "_icelab_event_geometry", None)
    if cache is None:
        cache = {}
        dom._icelab_event_geometry = cache
    key = (center, n)
    if key in cache:
        return cache[key]
    outer = _box(center, 2 * n)
    inner = _box(center, n)
    outer_al = aligned_mask(dom, outer.mask, outer.x0, outer.y0)
    if int(outer_al.sum()) != outer.n_cells:
        raise ValueError(f"domain does not contain the radius-{2 * n} box")
    inner_al = aligned_mask(dom, inner.mask, inner.x0, inner.y0)
    ann = outer_al & ~inner_al
    # Cells of the outer box with an axial neighbor off the box (or off
    # the grid): touching them means the flood escaped the annulus.
    pad = np.pad(outer_al, 1, constant_values=False)
    ring = outer_al & ~(pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:])
    seeds = np.flatnonzero(inner_al.reshape(-1))
    cache[key] = (outer_al, ann, ring, seeds)
    return cache[key]


def annulus_loop_event(field: HeightField, n: int) -> bool:
    """Whether some |h| = 2 circuit in the annulus A_{n,2n} surrounds the center.

    The annulus is taken between the dyadic boxes of radii n and 2n
    around the domain center.  For each sign, an axial flood from the
    inner box through non-candidate cells either escapes the outer box
    (no circuit can surround the center: an axial escape path would
    have to share a vertex with it) or is blocked, in which case the
    blocking interface is traced and certified as the witness circuit.
    """
    dom = field.domain
    center = dom.center
    outer_al, ann, ring, seeds = _event_geometry(dom, center, n)
    grid = field.grid
    for level in (2, -2):
        barrier = ann & (grid == level)
        allowed = outer_al & ~barrier
        reached = _flood_mask(allowed, seeds, diag=False)
        if np.any(reached & ring):
            continue
        _, right = trace_contour_flanks(reached)
        walk = [(dom.x0 + j, dom.y0 + i) for i, j in right]
        cyc = _surrounding_cycle(walk, center)
        if cyc is None:
            raise LoopExtractionError(
                "blocked flood without a surrounding interface circuit")
        loop = LevelLoop(_canonical(cyc), level)
        _certify_loop(loop, field, center)
        for v in loop.circuit:
            if not ann[v[1] - dom.y0, v[0] - dom.x0]:
                raise LoopExtractionError(f"witness circuit leaves the annulus at {v}")
        return True
    return False
