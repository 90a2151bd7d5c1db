"""Height functions on even domains and their six-vertex arrow encoding.

A height field assigns an integer to every cell of an even domain such
that adjacent cells differ by exactly 1 and h(v) has the parity of v.
Height differences encode arrows of the six-vertex (square ice) model
on the rotated lattice whose vertices sit at plaquette centers: each
lattice edge (u, v) is crossed by one primal edge, and the step
h(v) - h(u) = +1 exactly when that primal arrow is crossed from left to
right while traversing u -> v.  With the counterclockwise frame used
here ("left" of the travel direction), this means

    east step  (x,y) -> (x+1,y):  +1  <=>  crossing arrow points -y,
    north step (x,y) -> (x,y+1):  +1  <=>  crossing arrow points +x.

Curl-freeness of height differences around every plaquette is
equivalent to the ice rule (two in, two out) at the primal vertex in
its center, which makes heights <-> arrows a bijection once one anchor
value is fixed.

The pointwise order on fields with common boundary values has pointwise
min/max as lattice meet/join, and the extremal Lipschitz extensions

    max: h(v) = min over u in B of kappa(u) + dist(u, v)
    min: h(v) = max over u in B of kappa(u) - dist(u, v)

(graph distance inside the domain) bound every extension.  A boundary
condition is admissible exactly when the formula reproduces kappa on B.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .lattice import EvenDomain, Vertex, build_even_domain, neighbors, parity


class InadmissibleBoundary(ValueError):
    """Raised when a boundary condition admits no valid extension."""


@dataclass(eq=False)
class HeightField:
    """Integer heights over the cells of an even domain.

    Heights live in a dense (H, W) grid aligned with the domain mask;
    entries outside the cell set are meaningless and never read.
    """

    domain: EvenDomain
    grid: np.ndarray  # int32 (H, W), indexed [y - y0, x - x0]

    def value(self, v: Vertex) -> int:
        if not self.domain.contains(v):
            raise KeyError(f"vertex {v} is not a cell of the domain")
        return int(self.grid[v[1] - self.domain.y0, v[0] - self.domain.x0])

    def copy(self) -> "HeightField":
        return HeightField(self.domain, self.grid.copy())

    def cell_values(self) -> np.ndarray:
        """Heights over all cells in row-major order (canonical key)."""
        return self.grid[self.domain.mask]

    def interior_values(self) -> np.ndarray:
        ys = self.domain.interior_yx[:, 0] - self.domain.y0
        xs = self.domain.interior_yx[:, 1] - self.domain.x0
        return self.grid[ys, xs]

    def same_as(self, other: "HeightField") -> bool:
        return (domains_equal(self.domain, other.domain)
                and bool(np.array_equal(self.cell_values(), other.cell_values())))


def domains_equal(a: EvenDomain, b: EvenDomain) -> bool:
    return (a is b) or (a.center == b.center and a.radius == b.radius
                        and a.x0 == b.x0 and a.y0 == b.y0
                        and bool(np.array_equal(a.mask, b.mask)))


@dataclass(eq=False)
class BoundaryCondition:
    """Prescribed heights kappa on a subset B of the domain boundary."""

    domain: EvenDomain
    values: dict[Vertex, int]

    def __post_init__(self) -> None:
        for v, k in self.values.items():
            if v not in self.domain.boundary_set:
                raise ValueError(f"support vertex {v} is not on the domain boundary")
            if (k - parity(v)) % 2 != 0:
                raise ValueError(f"kappa({v}) = {k} has the wrong parity")

    @property
    def support(self) -> frozenset[Vertex]:
        return frozenset(self.values)

    def covers_boundary(self) -> bool:
        return self.support == self.domain.boundary_set


def zero_bc(domain: EvenDomain) -> BoundaryCondition:
    return BoundaryCondition(domain, {v: 0 for v in domain.boundary_set})


def constant_bc(domain: EvenDomain, level: int) -> BoundaryCondition:
    return BoundaryCondition(domain, {v: level for v in domain.boundary_set})


def validate(field: HeightField) -> list[tuple]:
    """All invariant violations of the field; empty means valid.

    Violations are data: ("step", u, v, h_u, h_v) for an adjacent pair
    not differing by 1, ("parity", v, h_v) for a height with the wrong
    parity.
    """
    dom = field.domain
    g = field.grid
    m = dom.mask
    out: list[tuple] = []

    def emit_steps(shift_axis: int) -> None:
        if shift_axis == 0:  # vertical edges (x, y) - (x, y+1)
            both = m[:-1, :] & m[1:, :]
            diff = np.abs(g[1:, :].astype(np.int64) - g[:-1, :]) != 1
        else:  # horizontal edges (x, y) - (x+1, y)
            both = m[:, :-1] & m[:, 1:]
            diff = np.abs(g[:, 1:].astype(np.int64) - g[:, :-1]) != 1
        for iy, ix in zip(*np.nonzero(both & diff)):
            u = (int(ix) + dom.x0, int(iy) + dom.y0)
            v = (u[0], u[1] + 1) if shift_axis == 0 else (u[0] + 1, u[1])
            out.append(("step", u, v, field.value(u), field.value(v)))

    emit_steps(0)
    emit_steps(1)
    ys, xs = np.nonzero(m)
    bad = ((g[ys, xs] - (ys + dom.y0 + xs + dom.x0)) % 2) != 0
    for iy, ix in zip(ys[bad], xs[bad]):
        v = (int(ix) + dom.x0, int(iy) + dom.y0)
        out.append(("parity", v, field.value(v)))
    return out


@dataclass(eq=False)
class ArrowConfig:
    """Arrow orientations of the six-vertex configuration induced by a field.

    One boolean per lattice edge with both endpoints in the domain,
    stored at the edge's lower-left endpoint:

    * ``east_down[iy, ix]``: the vertical primal arrow crossing the
      east edge (x, y)-(x+1, y) points in -y.
    * ``north_right[iy, ix]``: the horizontal primal arrow crossing the
      north edge (x, y)-(x, y+1) points in +x.
    """

    domain: EvenDomain
    east_down: np.ndarray    # bool (H, W); valid where east_valid
    north_right: np.ndarray  # bool (H, W); valid where north_valid
    east_valid: np.ndarray = field(init=False)
    north_valid: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        m = self.domain.mask
        self.east_valid = np.zeros_like(m)
        self.east_valid[:, :-1] = m[:, :-1] & m[:, 1:]
        self.north_valid = np.zeros_like(m)
        self.north_valid[:-1, :] = m[:-1, :] & m[1:, :]

    def ice_rule_violations(self) -> list[Vertex]:
        """Internal primal vertices (indexed by their plaquette's lower-left
        cell) where in-arrows do not number exactly two."""
        m = self.domain.mask
        internal = m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]
        n_in = (self.east_down[1:, :-1].astype(np.int8)        # top, down = in
                + (~self.east_down[:-1, :-1]).astype(np.int8)  # bottom, up = in
                + self.north_right[:-1, :-1].astype(np.int8)   # left, right = in
                + (~self.north_right[:-1, 1:]).astype(np.int8))  # right, left = in
        bad = internal & (n_in != 2)
        dom = self.domain
        return [(int(ix) + dom.x0, int(iy) + dom.y0) for iy, ix in zip(*np.nonzero(bad))]


def to_six_vertex(field: HeightField) -> ArrowConfig:
    """Arrow configuration of a valid field (rejects invalid input)."""
    bad = validate(field)
    if bad:
        raise ValueError(f"field is not a valid height function: {bad[0]}")
    g = field.grid.astype(np.int64)
    east_down = np.zeros_like(field.domain.mask)
    east_down[:, :-1] = (g[:, 1:] - g[:, :-1]) == 1
    north_right = np.zeros_like(field.domain.mask)
    north_right[:-1, :] = (g[1:, :] - g[:-1, :]) == 1
    return ArrowConfig(field.domain, east_down, north_right)


def from_six_vertex(arrows: ArrowConfig, anchor: Vertex, anchor_value: int) -> HeightField:
    """Integrate arrow steps into the unique field with the given anchor.

    Every in-domain edge is checked against the integrated heights, so
    an inconsistent configuration (e.g. one flipped arrow) is rejected.
    """
    dom = arrows.domain
    if not dom.contains(anchor):
        raise ValueError(f"anchor {anchor} is not a cell of the domain")
    if (anchor_value - parity(anchor)) % 2 != 0:
        raise ValueError("anchor value must have the anchor's parity")

    grid = np.zeros_like(dom.mask, dtype=np.int32)
    seen = np.zeros_like(dom.mask)
    ai, aj = anchor[1] - dom.y0, anchor[0] - dom.x0
    grid[ai, aj] = anchor_value
    seen[ai, aj] = True
    stack = [(ai, aj)]
    while stack:
        iy, ix = stack.pop()
        h = int(grid[iy, ix])
        for niy, nix, step in _arrow_steps(arrows, iy, ix):
            if not seen[niy, nix]:
                seen[niy, nix] = True
                grid[niy, nix] = h + step
                stack.append((niy, nix))
    if not np.array_equal(seen, dom.mask):
        raise ValueError("arrow configuration does not span the domain")

    out = HeightField(dom, grid)
    # Curl check: re-deriving the arrows must reproduce the input exactly.
    if validate(out):
        raise ValueError("arrow configuration is inconsistent (curl check failed)")
    back = to_six_vertex(out)
    ok = (np.array_equal(back.east_down & back.east_valid,
                         arrows.east_down & arrows.east_valid)
          and np.array_equal(back.north_right & back.north_valid,
                             arrows.north_right & arrows.north_valid))
    if not ok:
        raise ValueError("arrow configuration is inconsistent (curl check failed)")
    return out


def _arrow_steps(arrows: ArrowConfig, iy: int, ix: int):
    """(neighbor index, height step) for each in-domain edge at (iy, ix)."""
    if arrows.east_valid[iy, ix]:
        yield iy, ix + 1, 1 if arrows.east_down[iy, ix] else -1
    if ix > 0 and arrows.east_valid[iy, ix - 1]:
        yield iy, ix - 1, -1 if arrows.east_down[iy, ix - 1] else 1
    if arrows.north_valid[iy, ix]:
        yield iy + 1, ix, 1 if arrows.north_right[iy, ix] else -1
    if iy > 0 and arrows.north_valid[iy - 1, ix]:
        yield iy - 1, ix, -1 if arrows.north_right[iy - 1, ix] else 1


def extremal_field(domain: EvenDomain, bc: BoundaryCondition, which: str) -> HeightField:
    """Pointwise-extremal extension of the boundary condition.

    Raises InadmissibleBoundary when no valid extension exists, i.e.
    when the formula fails to reproduce kappa on its support.
    """
    if which not in ("max", "min"):
        raise ValueError("which must be 'max' or 'min'")
    if bc.domain is not domain and not domains_equal(bc.domain, domain):
        raise ValueError("boundary condition belongs to a different domain")
    if not bc.values:
        raise ValueError("boundary condition has empty support")
    sign = 1 if which == "max" else -1

    # Multi-source Dijkstra for min over u of (sign*kappa(u) + dist(u, v)).
    dist = np.full(domain.shape, np.iinfo(np.int64).max, dtype=np.int64)
    heap: list[tuple[int, int, int]] = []
    for v, k in bc.values.items():
        iy, ix = v[1] - domain.y0, v[0] - domain.x0
        val = sign * k
        if val < dist[iy, ix]:
            dist[iy, ix] = val
            heapq.heappush(heap, (val, iy, ix))
    m = domain.mask
    h, w = m.shape
    while heap:
        d, iy, ix = heapq.heappop(heap)
        if d > dist[iy, ix]:
            continue
        for niy, nix in ((iy + 1, ix), (iy - 1, ix), (iy, ix + 1), (iy, ix - 1)):
            if 0 <= niy < h and 0 <= nix < w and m[niy, nix] and d + 1 < dist[niy, nix]:
                dist[niy, nix] = d + 1
                heapq.heappush(heap, (d + 1, niy, nix))
    if np.any(m & (dist == np.iinfo(np.int64).max)):
        raise InadmissibleBoundary("support does not reach every cell")

    grid = np.where(m, sign * dist, 0).astype(np.int32)
    out = HeightField(domain, grid)
    for v, k in bc.values.items():
        if out.value(v) != k:
            raise InadmissibleBoundary(
                f"kappa({v}) = {k} conflicts with the Lipschitz bound {out.value(v)}")
    bad = validate(out)
    if bad:
        raise InadmissibleBoundary(f"extremal formula yields no valid field: {bad[0]}")
    return out


def meet(f: HeightField, g: HeightField) -> HeightField:
    if f.domain is not g.domain and not domains_equal(f.domain, g.domain):
        raise ValueError("meet requires fields on the same domain")
    return HeightField(f.domain, np.minimum(f.grid, g.grid))


def join(f: HeightField, g: HeightField) -> HeightField:
    if f.domain is not g.domain and not domains_equal(f.domain, g.domain):
        raise ValueError("join requires fields on the same domain")
    return HeightField(f.domain, np.maximum(f.grid, g.grid))


def reflect(field: HeightField, level: int, region) -> HeightField:
    """Reflect heights across `level` strictly inside `region`.

    The region must be the interior of a constant-height loop at
    `level`; this is enforced by validating the reflected field, which
    fails exactly when some edge leaving the region does not sit at the
    reflection level.
    """
    if level % 2 != 0:
        raise ValueError("reflection level must be even")
    dom = field.domain
    out = field.copy()
    for v in region.vertices():
        if not dom.contains(v):
            raise ValueError(f"region vertex {v} is outside the domain")
        iy, ix = v[1] - dom.y0, v[0] - dom.x0
        out.grid[iy, ix] = 2 * level - out.grid[iy, ix]
    bad = validate(out)
    if bad:
        raise ValueError(f"region is not bounded by a constant-height loop: {bad[0]}")
    return out


def write_field(field: HeightField, fh: IO[str]) -> None:
    """Text serialization: header `N center_x center_y`, then `x y h` rows."""
    dom = field.domain
    fh.write(f"{dom.radius} {dom.center[0]} {dom.center[1]}\n")
    ys, xs = np.nonzero(dom.mask)
    for iy, ix in zip(ys, xs):
        x, y = int(ix) + dom.x0, int(iy) + dom.y0
        fh.write(f"{x} {y} {int(field.grid[iy, ix])}\n")


def read_field(fh: IO[str]) -> HeightField:
    header = fh.readline().split()
    if len(header) != 3:
        raise ValueError("malformed field header")
    radius, cx, cy = (int(t) for t in header)
    dom = build_even_domain((cx, cy), radius)
    grid = np.zeros_like(dom.mask, dtype=np.int32)
    seen = np.zeros_like(dom.mask)
    for line in fh:
        if not line.strip():
            continue
        x, y, h = (int(t) for t in line.split())
        if not dom.contains((x, y)):
            raise ValueError(f"row for {x, y} is outside the declared domain")
        grid[y - dom.y0, x - dom.x0] = h
        seen[y - dom.y0, x - dom.x0] = True
    if not np.array_equal(seen, dom.mask):
        raise ValueError("serialized field does not cover the domain")
    return HeightField(dom, grid)
