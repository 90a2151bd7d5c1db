"""Numba kernels for heat-bath sweeps over a domain's interior.

Heights are passed as the flattened (H*W) int32 grid of a field; the
site tables hold flat indices of the interior cells in row-major scan
order together with their four axial neighbors (always in-domain for
interior sites).  Update bits are derived on the fly from
(stream seed, sweep key, site rank) with the splitmix64 finalizer, the
same formula as ``icelab._mix.counter_bit`` with

    counter = sweep_key * n_sites + site_rank.

Nothing is stored between sweeps, so coupling-from-the-past can replay
the bits of any past sweep by key, and two coupled chains see identical
(site, bit) streams by construction.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S63 = np.uint64(63)


@njit(cache=True, inline="always")
def _bit(seed: np.uint64, counter: np.uint64) -> np.int32:
    z = seed + counter * _GOLDEN
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    return np.int32(z >> _S63)


@njit(cache=True, nogil=True)
def run_sweeps(h, idx, nu, nd, nl, nr, seed, first_key, n_sweeps):
    """n_sweeps full heat-bath sweeps in scan order, keys first_key .. +n-1."""
    n = idx.shape[0]
    un = np.uint64(n)
    for s in range(n_sweeps):
        base = np.uint64(first_key + s) * un
        for i in range(n):
            a = h[nu[i]]
            b = h[nd[i]]
            c = h[nl[i]]
            d = h[nr[i]]
            lo = min(min(a, b), min(c, d))
            hi = max(max(a, b), max(c, d))
            if lo == hi:
                u = _bit(seed, base + np.uint64(i))
                h[idx[i]] = lo - 1 + 2 * u
            else:
                h[idx[i]] = (lo + hi) >> 1


@njit(cache=True, nogil=True)
def run_pair_sweeps(h1, h2, idx, nu, nd, nl, nr, seed, first_key, n_sweeps):
    """Two chains driven by the identical (site, bit) stream."""
    n = idx.shape[0]
    un = np.uint64(n)
    for s in range(n_sweeps):
        base = np.uint64(first_key + s) * un
        for i in range(n):
            lo1 = min(min(h1[nu[i]], h1[nd[i]]), min(h1[nl[i]], h1[nr[i]]))
            hi1 = max(max(h1[nu[i]], h1[nd[i]]), max(h1[nl[i]], h1[nr[i]]))
            lo2 = min(min(h2[nu[i]], h2[nd[i]]), min(h2[nl[i]], h2[nr[i]]))
            hi2 = max(max(h2[nu[i]], h2[nd[i]]), max(h2[nl[i]], h2[nr[i]]))
            if lo1 == hi1 or lo2 == hi2:
                u = _bit(seed, base + np.uint64(i))
            else:
                u = np.int32(0)
            h1[idx[i]] = lo1 - 1 + 2 * u if lo1 == hi1 else (lo1 + hi1) >> 1
            h2[idx[i]] = lo2 - 1 + 2 * u if lo2 == hi2 else (lo2 + hi2) >> 1


@njit(cache=True, nogil=True)
def run_pair_epoch(h1, h2, idx, nu, nd, nl, nr, seed, epoch_len):
    """Sweeps at times -epoch_len .. -1: keys epoch_len-1 down to 0.

    Chronological order from the deep past toward time zero; the key of
    the sweep at time -s is s-1, independent of the epoch length, which
    is what lets doubled epochs reuse the same bits.
    """
    for s in range(epoch_len, 0, -1):
        run_pair_sweeps(h1, h2, idx, nu, nd, nl, nr, seed, s - 1, 1)


@njit(cache=True, nogil=True)
def probe_series(h, idx, nu, nd, nl, nr, seed, first_key, n_sweeps, probe):
    """Run sweeps recording h[probe] after each sweep (pilot diagnostics)."""
    out = np.empty(n_sweeps, dtype=np.int32)
    for s in range(n_sweeps):
        run_sweeps(h, idx, nu, nd, nl, nr, seed, first_key + s, 1)
        out[s] = h[probe]
    return out


@njit(cache=True, nogil=True)
def flood(allowed, seeds, w, diag):
    """Component of the seed set inside ``allowed``, axial or x-adjacency.

    ``allowed`` is a flat uint8 grid of width w; ``seeds`` holds flat
    indices.  Returns the visited uint8 grid.
    """
    n = allowed.size
    h = n // w
    visited = np.zeros(n, dtype=np.uint8)
    queue = np.empty(n, dtype=np.int64)
    qt = 0
    for k in range(seeds.size):
        s = seeds[k]
        if allowed[s] and not visited[s]:
            visited[s] = 1
            queue[qt] = s
            qt += 1
    qh = 0
    while qh < qt:
        p = queue[qh]
        qh += 1
        i = p // w
        j = p - i * w
        for t in range(8 if diag else 4):
            if t == 0:
                ni, nj = i + 1, j
            elif t == 1:
                ni, nj = i - 1, j
            elif t == 2:
                ni, nj = i, j + 1
            elif t == 3:
                ni, nj = i, j - 1
            elif t == 4:
                ni, nj = i + 1, j + 1
            elif t == 5:
                ni, nj = i + 1, j - 1
            elif t == 6:
                ni, nj = i - 1, j + 1
            else:
                ni, nj = i - 1, j - 1
            if 0 <= ni < h and 0 <= nj < w:
                q = ni * w + nj
                if allowed[q] and not visited[q]:
                    visited[q] = 1
                    queue[qt] = q
                    qt += 1
    return visited
