"""Boundary tracing of cell regions on the square grid.

Treat each vertex as a unit cell and walk the outer wall contour of a
region keeping the region on the left (counterclockwise).  At saddle
corners, where two region cells meet diagonally, the walk turns right,
which keeps ×-connected (8-connected) regions on a single closed
contour.  The cells flanking the traversed walls, deduplicated along
the walk, give the region's outer boundary cells in cyclic order;
consecutive entries are ×-adjacent.  A cell can appear twice when the
region is pinched, so consumers split the walk into simple cycles.
"""

from __future__ import annotations

import numpy as np

# Directions in (di, dj) corner steps; i is the row (y), j the column (x).
_E, _N, _W, _S = 0, 1, 2, 3
_STEP = {_E: (0, 1), _N: (1, 0), _W: (0, -1), _S: (-1, 0)}
_RIGHT = {_E: _S, _N: _E, _W: _N, _S: _W}
_LEFT = {_E: _N, _N: _W, _W: _S, _S: _E}

# For a wall leaving corner (i, j) in direction d, the flanking cells
# (left of travel, right of travel) as offsets of the corner.
_FLANKS = {
    _E: ((0, 0), (-1, 0)),
    _N: ((0, -1), (0, 0)),
    _W: ((-1, -1), (0, -1)),
    _S: ((-1, 0), (-1, -1)),
}


def trace_contour_flanks(
    mask: np.ndarray,
) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Left (region) and right (outside) flank cells along the outer wall.

    Both lists are cyclic with consecutive duplicates removed; in each,
    consecutive entries are ×-adjacent.  Left entries index region
    cells; right entries index the cells just across the wall and must
    stay inside the array (callers guarantee a margin).
    """
    h, w = mask.shape

    def inside(ci: int, cj: int) -> bool:
        return 0 <= ci < h and 0 <= cj < w and bool(mask[ci, cj])

    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise ValueError("cannot trace an empty region")
    i0 = int(rows.min())
    j0 = int(cols[rows == i0].min())

    # Start on the south wall of the lowest-leftmost cell, heading east.
    start = (i0, j0, _E)
    ci, cj, d = start
    left: list[tuple[int, int]] = []
    right: list[tuple[int, int]] = []
    while True:
        (li, lj), (ri, rj) = _FLANKS[d]
        cell = (ci + li, cj + lj)
        if not left or left[-1] != cell:
            left.append(cell)
        rcell = (ci + ri, cj + rj)
        if not right or right[-1] != rcell:
            right.append(rcell)
        si, sj = _STEP[d]
        ci, cj = ci + si, cj + sj
        # Pick the next direction: right turn first (saddle rule), then
        # straight, then left.  A wall is valid when the region lies on
        # its left and not on its right.
        for nd in (_RIGHT[d], d, _LEFT[d]):
            (li, lj), (ri, rj) = _FLANKS[nd]
            if inside(ci + li, cj + lj) and not inside(ci + ri, cj + rj):
                d = nd
                break
        else:
            raise ValueError("wall walk hit a dead end (region inconsistent)")
        if (ci, cj, d) == start:
            break
    for seq in (left, right):
        if len(seq) > 1 and seq[0] == seq[-1]:
            seq.pop()
    return left, right


def trace_outer_boundary(mask: np.ndarray) -> list[tuple[int, int]]:
    """Outer boundary cells of a nonempty region, in counterclockwise order.

    Returns (i, j) index pairs into ``mask``.  Consecutive entries
    (cyclically) are distinct and ×-adjacent; a pinched region may list
    a cell more than once.
    """
    return trace_contour_flanks(mask)[0]


def split_simple_cycles(walk: list) -> list[list]:
    """Split a closed walk into simple cycles at repeated entries.

    Scans the walk keeping a stack; when an entry repeats, the segment
    since its previous occurrence is popped off as one simple cycle.
    The leftover stack closes the final cycle.  The union of the pieces
    is the original walk.
    """
    stack: list = []
    where: dict = {}
    cycles: list[list] = []
    for item in walk:
        if item in where:
            k = where[item]
            piece = stack[k:]
            for it in piece:
                del where[it]
            del stack[k:]
            cycles.append(piece)
        where[item] = len(stack)
        stack.append(item)
    if stack:
        cycles.append(stack)
    return [c for c in cycles if len(c) >= 3]
