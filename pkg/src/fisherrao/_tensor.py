"""Small helpers for index symmetries of dense numpy tensors."""

from __future__ import annotations

from itertools import permutations

import numpy as np


def symmetrize(t: np.ndarray, groups: list[tuple[int, ...]] | None = None) -> np.ndarray:
    """Average ``t`` over permutations of its trailing axes.

    With ``groups=None`` the last ``k`` axes (all of them for a plain tensor)
    are fully symmetrized.  Otherwise each entry of ``groups`` lists axes
    that are permuted among themselves.  The result is written back through
    a canonical-index lookup, so symmetric entries are bitwise equal.
    """
    t = np.asarray(t, dtype=float)
    if groups is None:
        groups = [tuple(range(t.ndim))]
    out = t
    for grp in groups:
        perms = list(permutations(grp))
        acc = np.zeros_like(out)
        for p in perms:
            axes = list(range(out.ndim))
            for src, dst in zip(grp, p):
                axes[src] = dst
            acc = acc + np.transpose(out, axes)
        out = acc / len(perms)
        out = _canonicalize(out, grp)
    return out


def _canonicalize(t: np.ndarray, grp: tuple[int, ...]) -> np.ndarray:
    # copy the value at the sorted index tuple to every permutation of it
    idx = np.indices(t.shape)
    sub = np.sort(idx[list(grp)], axis=0)
    idx[list(grp)] = sub
    return t[tuple(idx)]


def pair_swap_symmetrize(q: np.ndarray) -> np.ndarray:
    """Symmetrize a 4-tensor in (i,j), in (k,l) and under (ij)<->(kl)."""
    q = symmetrize(q, [(0, 1), (2, 3)])
    q = 0.5 * (q + np.transpose(q, (2, 3, 0, 1)))
    # re-impose exact within-pair symmetry after the swap average
    return _canonicalize(_canonicalize(q, (0, 1)), (2, 3))


def max_asymmetry(t: np.ndarray, grp: tuple[int, ...]) -> float:
    worst = 0.0
    for p in permutations(grp):
        axes = list(range(t.ndim))
        for src, dst in zip(grp, p):
            axes[src] = dst
        worst = max(worst, float(np.max(np.abs(t - np.transpose(t, axes)), initial=0.0)))
    return worst
