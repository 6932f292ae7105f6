"""Tensor-factor bookkeeping for dense complex operator blocks.

Every operator block in this package is a 2-D complex array whose row and
column indices flatten a leading "internal" dimension (system or full Fock
index) followed by one d-dimensional noise factor per labelled grid point,
in C order.  The helpers here relabel, permute, insert and contract those
factors; all higher modules funnel their index gymnastics through this file
so the conventions live in exactly one place.

For d = 1 every factor is trivial and the helpers reduce to no-ops.
"""

from __future__ import annotations

import numpy as np

Pts = tuple[int, ...]


def flat_dim(internal: int, npts: int, d: int) -> int:
    """Flattened length of (internal,) + (d,)*npts."""
    return internal * d**npts


def zeros_block(row_internal: int, row_pts: Pts, col_internal: int,
                col_pts: Pts, d: int) -> np.ndarray:
    return np.zeros((flat_dim(row_internal, len(row_pts), d),
                     flat_dim(col_internal, len(col_pts), d)), dtype=complex)


def permute_factors(mat: np.ndarray, d: int,
                    row_internal: int, row_src: Pts, row_dst: Pts,
                    col_internal: int, col_src: Pts, col_dst: Pts) -> np.ndarray:
    """Reorder the noise factors of ``mat`` from src point order to dst.

    ``row_dst``/``col_dst`` must be permutations of ``row_src``/``col_src``.
    """
    if row_src == row_dst and col_src == col_dst:
        return np.asarray(mat, dtype=complex)
    if set(row_src) != set(row_dst) or set(col_src) != set(col_dst):
        raise ValueError("factor relabelling must permute the same point sets")
    mat = np.asarray(mat, dtype=complex)
    if d == 1:
        return mat
    r, c = len(row_src), len(col_src)
    t = mat.reshape((row_internal,) + (d,) * r + (col_internal,) + (d,) * c)
    row_axes = [1 + row_src.index(p) for p in row_dst]
    col_axes = [2 + r + col_src.index(p) for p in col_dst]
    t = t.transpose([0] + row_axes + [1 + r] + col_axes)
    return np.ascontiguousarray(t).reshape(mat.shape)


def identity_extend(mat: np.ndarray, d: int,
                    row_internal: int, row_src: Pts,
                    col_internal: int, col_src: Pts,
                    new_pts: Pts, row_dst: Pts, col_dst: Pts) -> np.ndarray:
    """Tensor identity noise factors at ``new_pts`` onto both sides of ``mat``.

    The result is permuted so its factors follow ``row_dst``/``col_dst``
    (which must enumerate row_src+new_pts resp. col_src+new_pts).
    """
    mat = np.asarray(mat, dtype=complex)
    if new_pts:
        mat = np.kron(mat, np.eye(d ** len(new_pts), dtype=complex))
    return permute_factors(mat, d,
                           row_internal, row_src + new_pts, row_dst,
                           col_internal, col_src + new_pts, col_dst)


def conj_transpose(mat: np.ndarray) -> np.ndarray:
    return np.asarray(mat).conj().T


def opnorm(mat: np.ndarray) -> float:
    """Largest singular value; 0 for empty blocks."""
    mat = np.asarray(mat)
    if mat.size == 0:
        return 0.0
    return float(np.linalg.norm(mat, 2))


def merge_sorted(a: Pts, b: Pts) -> Pts:
    """Disjoint union of two point tuples, ascending order."""
    if set(a) & set(b):
        raise ValueError(f"point sets overlap: {a} and {b}")
    return tuple(sorted(a + b))
