"""Exhaustive nearest-neighbour descriptor matching with ratio test and cross-check."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

_CHUNK = 2048


class Match(NamedTuple):
    index_a: int
    index_b: int
    distance: float


def _two_nearest(q: np.ndarray, ref: np.ndarray):
    """Index of the nearest row of ``ref`` for each row of ``q``, plus nearest/second distances."""
    n = len(q)
    nn = np.zeros(n, dtype=np.int64)
    d1 = np.full(n, np.inf)
    d2 = np.full(n, np.inf)
    if len(ref) == 0:
        return nn, d1, d2
    rn = np.einsum("ij,ij->i", ref, ref)
    for start in range(0, n, _CHUNK):
        blk = q[start:start + _CHUNK]
        sq = np.einsum("ij,ij->i", blk, blk)[:, None] + rn[None, :] - 2.0 * blk @ ref.T
        np.maximum(sq, 0.0, out=sq)
        rows = np.arange(len(blk))
        best = np.argmin(sq, axis=1)
        nn[start:start + len(blk)] = best
        d1[start:start + len(blk)] = sq[rows, best]
        if len(ref) > 1:
            sq[rows, best] = np.inf
            d2[start:start + len(blk)] = sq.min(axis=1)
    return nn, np.sqrt(d1), np.sqrt(d2)


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(getattr(x, "descriptors", x), dtype=np.float64)
    return x.reshape(0, 128) if x.size == 0 else np.atleast_2d(x)


def _passes_ratio(d1, d2, ratio):
    # ratio test is waived when no second neighbour exists
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.isinf(d2) | (d1 < ratio * d2)


def match_arrays(a: np.ndarray, b: np.ndarray, ratio: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Mutual ratio-test matches as an (m, 2) index array sorted by index_a, plus distances."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    a = _as_matrix(a)
    b = _as_matrix(b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    nn_ab, d1_ab, d2_ab = _two_nearest(a, b)
    nn_ba, d1_ba, d2_ba = _two_nearest(b, a)
    ia = np.arange(len(a))
    mutual = nn_ba[nn_ab] == ia
    ok = mutual & _passes_ratio(d1_ab, d2_ab, ratio) & _passes_ratio(d1_ba[nn_ab], d2_ba[nn_ab], ratio)
    ia = ia[ok]
    ib = nn_ab[ok]
    dist = np.linalg.norm(a[ia] - b[ib], axis=1)
    return np.column_stack([ia, ib]).astype(np.int64), dist


def match_exhaustive(a, b, ratio: float = 0.8) -> list[Match]:
    """Match every descriptor of ``a`` against every descriptor of ``b``.

    A pair survives when each side is the other's nearest neighbour and both
    directions pass the nearest/second-nearest ratio test, which makes the
    result symmetric in ``a`` and ``b``.
    """
    idx, dist = match_arrays(a, b, ratio)
    return [Match(int(i), int(j), float(d)) for (i, j), d in zip(idx, dist)]
