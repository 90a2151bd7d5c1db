"""Lattice geometry for height-function simulations on Z².

Vertices are integer pairs (x, y) with parity (x + y) mod 2; "even"
vertices have parity 0.  Two adjacency notions are used throughout:

* neighbors: the 4 vertices at Euclidean distance 1,
* cross (×) neighbors: the 8 vertices at distance 1 or sqrt(2).

An even domain is a finite cell set whose boundary (cells with a
neighbor outside) is a single simple closed ×-circuit of even vertices.
``build_even_domain(center, radius)`` realizes the canonical zig-zag
choice: cells are the square box of the given radius plus the even
vertices of the next ring that touch the box, which makes the boundary
alternate between the two rings.  Exactly one vertex of each inner/outer
ring pair is even, so the rule is total for every center parity, and

    box(center, radius) ⊆ cells ⊆ box(center, radius + 1)

holds for radius ≥ 1.  Radius 0 is the minimal domain around the
center: the L¹ ball of radius 2 for an even center (13 cells, the
smallest even domain whose interior contains an even vertex) or of
radius 1 for an odd center.  No even domain fits inside box(center, 1)
around an even center, so for even centers radius 0 coincides with
radius 1 and strict nesting starts at radius 1.

Regions (annuli between two nested domains, origin-centered rectangles)
are plain vertex sets with no model semantics attached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

Vertex = tuple[int, int]

# Offsets of the 4 axial and 8 cross neighbors, fixed order.
AXIAL_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))
DIAGONAL_OFFSETS = ((1, 1), (1, -1), (-1, 1), (-1, -1))
CROSS_OFFSETS = AXIAL_OFFSETS + DIAGONAL_OFFSETS

MAX_COORD = 2**31 - 1


def parity(v: Vertex) -> int:
    return (v[0] + v[1]) & 1


def neighbors(v: Vertex) -> list[Vertex]:
    x, y = v
    return [(x + dx, y + dy) for dx, dy in AXIAL_OFFSETS]


def cross_neighbors(v: Vertex) -> list[Vertex]:
    x, y = v
    return [(x + dx, y + dy) for dx, dy in CROSS_OFFSETS]


@dataclass(eq=False)
class EvenDomain:
    """Finite even domain with grid-backed membership structures.

    The mask arrays are indexed [y - y0, x - x0].  All attributes are
    filled at construction time and must be treated as immutable; the
    class is safe to share across workers.
    """

    center: Vertex
    radius: int
    x0: int
    y0: int
    mask: np.ndarray            # bool (H, W): cell membership
    boundary_mask: np.ndarray   # bool (H, W): cells with a neighbor outside
    circuit: list[Vertex]       # boundary in cyclic order, counterclockwise

    boundary_set: frozenset[Vertex] = field(init=False)
    interior_yx: np.ndarray = field(init=False)   # (n_int, 2) rows (y, x), row-major
    n_cells: int = field(init=False)

    def __post_init__(self) -> None:
        self.boundary_set = frozenset(self.circuit)
        inner = self.mask & ~self.boundary_mask
        ys, xs = np.nonzero(inner)  # np.nonzero scans rows first: row-major order
        self.interior_yx = np.column_stack([ys + self.y0, xs + self.x0]).astype(np.int64)
        self.n_cells = int(self.mask.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def contains(self, v: Vertex) -> bool:
        ix, iy = v[0] - self.x0, v[1] - self.y0
        h, w = self.mask.shape
        return 0 <= ix < w and 0 <= iy < h and bool(self.mask[iy, ix])

    def contains_all(self, vertices) -> bool:
        return all(self.contains(v) for v in vertices)

    def is_interior(self, v: Vertex) -> bool:
        return self.contains(v) and v not in self.boundary_set

    def cells(self) -> Iterator[Vertex]:
        """All cells in row-major (y, then x) order."""
        ys, xs = np.nonzero(self.mask)
        for y, x in zip(ys, xs):
            yield (int(x) + self.x0, int(y) + self.y0)

    def interior(self) -> Iterator[Vertex]:
        for y, x in self.interior_yx:
            yield (int(x), int(y))

    @property
    def n_interior(self) -> int:
        return len(self.interior_yx)


def _minimal_cells(center: Vertex, grid: "_Grid") -> None:
    """Fill the radius-0 mask: the L¹ ball of radius 2 (even center) or 1 (odd)."""
    cx, cy = center
    r1 = 2 if parity(center) == 0 else 1
    for dy in range(-r1, r1 + 1):
        for dx in range(-r1 + abs(dy), r1 - abs(dy) + 1):
            grid.set(cx + dx, cy + dy)


class _Grid:
    def __init__(self, x0: int, y0: int, w: int, h: int):
        self.x0, self.y0 = x0, y0
        self.mask = np.zeros((h, w), dtype=bool)

    def set(self, x: int, y: int) -> None:
        self.mask[y - self.y0, x - self.x0] = True


def build_even_domain(center: Vertex, radius: int) -> EvenDomain:
    """Construct the canonical even domain of the given radius.

    Total for every center and radius ≥ 0.  The result is validated
    against all domain invariants before being returned.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    cx, cy = center
    reach = max(radius + 1, 2)
    if max(abs(cx), abs(cy)) + reach > MAX_COORD:
        raise ValueError("domain exceeds the 32-bit coordinate range")

    x0, y0 = cx - reach, cy - reach
    side = 2 * reach + 1
    grid = _Grid(x0, y0, side, side)

    if radius == 0:
        _minimal_cells(center, grid)
    else:
        r = radius
        grid.mask[reach - r:reach + r + 1, reach - r:reach + r + 1] = True
        # Even-parity skin on ring radius+1, only where it touches the box.
        for d in range(-r, r + 1):
            for x, y in ((cx + d, cy + r + 1), (cx + d, cy - r - 1),
                         (cx + r + 1, cy + d), (cx - r - 1, cy + d)):
                if parity((x, y)) == 0:
                    grid.set(x, y)

    mask = grid.mask
    boundary_mask = _boundary_of(mask)
    circuit = _trace_circuit(mask, boundary_mask, x0, y0)
    dom = EvenDomain(center=center, radius=radius, x0=x0, y0=y0,
                     mask=mask, boundary_mask=boundary_mask, circuit=circuit)
    _validate_domain(dom)
    return dom


def _boundary_of(mask: np.ndarray) -> np.ndarray:
    """Cells having at least one axial neighbor outside the cell set."""
    outside = ~mask
    edge = np.zeros_like(mask)
    edge[1:, :] |= outside[:-1, :]
    edge[:-1, :] |= outside[1:, :]
    edge[:, 1:] |= outside[:, :-1]
    edge[:, :-1] |= outside[:, 1:]
    # Cells on the array rim always have an (implicit) outside neighbor.
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    return mask & edge


def _trace_circuit(mask: np.ndarray, boundary_mask: np.ndarray,
                   x0: int, y0: int) -> list[Vertex]:
    """Order the boundary set into a simple closed ×-circuit, counterclockwise.

    The geometric wall walk resolves corner configurations where the
    boundary's ×-adjacency graph has chords.  Any violation of the
    circuit invariants raises: construction is certified, not assumed.
    """
    from ._trace import trace_outer_boundary

    walk = trace_outer_boundary(mask)
    out = [(j + x0, i + y0) for i, j in walk]
    ys, xs = np.nonzero(boundary_mask)
    bset = {(int(x) + x0, int(y) + y0) for x, y in zip(xs, ys)}
    if len(out) != len(bset) or set(out) != bset:
        raise ValueError("boundary walk does not visit each boundary cell once")
    # The wall walk is counterclockwise; rotate to a canonical start.
    k = out.index(min(out, key=lambda v: (v[1], v[0])))
    return out[k:] + out[:k]


def _validate_domain(dom: EvenDomain) -> None:
    circuit = dom.circuit
    if len(set(circuit)) != len(circuit):
        raise ValueError("boundary circuit is not simple")
    for a, b in zip(circuit, circuit[1:] + circuit[:1]):
        if max(abs(a[0] - b[0]), abs(a[1] - b[1])) != 1:
            raise ValueError("boundary circuit is not ×-connected")
    for v in circuit:
        if parity(v) != 0:
            raise ValueError(f"odd vertex {v} on boundary")
    # Boundary must be exactly the cells with a neighbor outside.
    ys, xs = np.nonzero(dom.boundary_mask)
    derived = {(int(x) + dom.x0, int(y) + dom.y0) for x, y in zip(xs, ys)}
    if derived != set(circuit):
        raise ValueError("boundary circuit does not match the neighbor scan")
    # Nesting against the defining boxes (lower bound always, upper for r ≥ 1).
    cx, cy = dom.center
    r = dom.radius
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if not dom.contains((cx + dx, cy + dy)):
                raise ValueError("box(center, radius) not contained in cells")
    if r >= 1:
        ys, xs = np.nonzero(dom.mask)
        if (np.abs(xs + dom.x0 - cx).max() > r + 1
                or np.abs(ys + dom.y0 - cy).max() > r + 1):
            raise ValueError("cells exceed box(center, radius + 1)")


@dataclass(eq=False)
class Region:
    """Plain vertex set used for containment and crossing queries."""

    kind: str                   # "annulus" | "rectangle" | "generic"
    x0: int
    y0: int
    mask: np.ndarray            # bool (H, W), indexed [y - y0, x - x0]
    params: dict = field(default_factory=dict)

    def contains(self, v: Vertex) -> bool:
        ix, iy = v[0] - self.x0, v[1] - self.y0
        h, w = self.mask.shape
        return 0 <= ix < w and 0 <= iy < h and bool(self.mask[iy, ix])

    def contains_all(self, vertices) -> bool:
        return all(self.contains(v) for v in vertices)

    @property
    def n_vertices(self) -> int:
        return int(self.mask.sum())

    def vertices(self) -> Iterator[Vertex]:
        ys, xs = np.nonzero(self.mask)
        for y, x in zip(ys, xs):
            yield (int(x) + self.x0, int(y) + self.y0)


def annulus_region(center: Vertex, r_in: int, r_out: int) -> Region:
    """Cells of the radius-r_out domain minus cells of the radius-r_in one."""
    if r_in <= 0 or r_out <= 0:
        raise ValueError("annulus radii must be positive")
    if r_in >= r_out:
        raise ValueError("annulus requires r_in < r_out")
    outer = build_even_domain(center, r_out)
    inner = build_even_domain(center, r_in)
    mask = outer.mask.copy()
    oy = inner.y0 - outer.y0
    ox = inner.x0 - outer.x0
    h, w = inner.mask.shape
    mask[oy:oy + h, ox:ox + w] &= ~inner.mask
    return Region(kind="annulus", x0=outer.x0, y0=outer.y0, mask=mask,
                  params={"center": center, "r_in": r_in, "r_out": r_out})


def rectangle_region(rho_n: int, n: int) -> Region:
    """Origin-centered rectangle [-n, n] × [-rho_n, rho_n]."""
    if rho_n <= 0 or n <= 0:
        raise ValueError("rectangle half-sides must be positive")
    mask = np.ones((2 * rho_n + 1, 2 * n + 1), dtype=bool)
    return Region(kind="rectangle", x0=-n, y0=-rho_n, mask=mask,
                  params={"rho_n": rho_n, "n": n})


def box_region(center: Vertex, radius: int) -> Region:
    """Square box used when a generic vertex set is needed."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    mask = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return Region(kind="generic", x0=center[0] - radius, y0=center[1] - radius,
                  mask=mask, params={"center": center, "radius": radius})


def aligned_mask(dom: EvenDomain, mask: np.ndarray, x0: int, y0: int) -> np.ndarray:
    """`mask` (anchored at x0, y0) expressed in dom's frame, clipped to dom cells."""
    H, W = dom.shape
    h, w = mask.shape
    out = np.zeros((H, W), dtype=bool)
    di, dj = y0 - dom.y0, x0 - dom.x0
    si, sj = max(0, -di), max(0, -dj)
    ti, tj = max(0, di), max(0, dj)
    hh, ww = min(h - si, H - ti), min(w - sj, W - tj)
    if hh > 0 and ww > 0:
        out[ti:ti + hh, tj:tj + ww] = mask[si:si + hh, sj:sj + ww]
    return out & dom.mask
