"""Indefinite-metric representation space of three-chain tensor functions.

Vectors are indexed by triples of pairwise disjoint chains; only the middle
chain carries noise factors.  The pseudoscalar product pairs a block with
the partner block whose outer chains are swapped, which makes it Hermitian
symmetric but indefinite.  Kernels act decomposably (pointwise in the union
chain, no quadrature weights); the embedding J and its pseudo-adjoint
intertwine this action with the Fock representation exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .blocks import Pts, merge_sorted, permute_factors
from .kernels import Kernel, KernelTable
from .lattice import FockBasis, FockVector, Grid, chain_weight

__all__ = [
    "PseudoFockVector", "triples", "pseudo_inner", "decomposable_action",
    "embed_j", "project_jstar", "truncated_j_bound",
    "pseudo_adjoint_defect", "sandwich_matrix",
]

Triple = tuple[Pts, Pts, Pts]


def triples(m: int) -> list[Triple]:
    """All ordered triples of pairwise disjoint chains over m points."""
    out = []
    for labels in itertools.product(range(4), repeat=m):
        parts: list[list[int]] = [[], [], []]
        for p, lab in zip(range(m), labels):
            if lab:
                parts[lab - 1].append(p)
        out.append(tuple(tuple(q) for q in parts))
    return out


@dataclass
class PseudoFockVector:
    """Blocks over disjoint chain triples; middle-chain noise factors only."""

    grid: Grid
    blocks: dict[Triple, np.ndarray] = field(default_factory=dict)

    def block_dim(self, mid: Pts) -> int:
        return self.grid.system_dim * self.grid.noise_dim ** len(mid)

    def value(self, tr: Triple) -> np.ndarray:
        got = self.blocks.get(tr)
        if got is not None:
            return got
        return np.zeros(self.block_dim(tr[1]), dtype=complex)

    def set_block(self, tr: Triple, values) -> None:
        values = np.asarray(values, dtype=complex).reshape(-1)
        pts = tr[0] + tr[1] + tr[2]
        if len(set(pts)) != len(pts):
            raise ValueError(f"triple chains must be disjoint: {tr}")
        if values.shape[0] != self.block_dim(tr[1]):
            raise ValueError(f"block for {tr} has wrong size")
        self.blocks[tr] = values

    def __add__(self, o: "PseudoFockVector") -> "PseudoFockVector":
        out = PseudoFockVector(self.grid, dict(self.blocks))
        for tr, b in o.blocks.items():
            out.blocks[tr] = out.value(tr) + b
        return out

    def __mul__(self, s: complex) -> "PseudoFockVector":
        return PseudoFockVector(self.grid,
                                {tr: b * s for tr, b in self.blocks.items()})

    __rmul__ = __mul__


def pseudo_inner(a: PseudoFockVector, b: PseudoFockVector) -> complex:
    """Indefinite pairing: weighted triple sum against the outer-swapped
    partner block."""
    grid = a.grid
    out = 0.0 + 0.0j
    keys = set(a.blocks) | {(t[2], t[1], t[0]) for t in b.blocks}
    for tr in keys:
        swapped = (tr[2], tr[1], tr[0])
        wgt = (chain_weight(grid, tr[0]) * chain_weight(grid, tr[1])
               * chain_weight(grid, tr[2]))
        out += wgt * np.vdot(a.value(tr), b.value(swapped))
    return complex(out)


def _splits3(chain: Pts):
    for labels in itertools.product(range(3), repeat=len(chain)):
        parts: list[list[int]] = [[], [], []]
        for p, lab in zip(chain, labels):
            parts[lab].append(p)
        yield tuple(tuple(q) for q in parts)


def _splits2(chain: Pts):
    for labels in itertools.product(range(2), repeat=len(chain)):
        parts: list[list[int]] = [[], []]
        for p, lab in zip(chain, labels):
            parts[lab].append(p)
        yield tuple(parts[0]), tuple(parts[1])


def decomposable_action(k: Kernel, a: PseudoFockVector) -> PseudoFockVector:
    """Pointwise action of a kernel on the three-chain space.

    The output block at a triple sums the kernel over all ways of feeding
    the minus chain into (untouched, annihilation, time) and the middle
    chain into (gauge, creation); no quadrature weights appear.
    """
    grid = k.grid
    n, d = grid.system_dim, grid.noise_dim
    out = PseudoFockVector(grid)
    for tr in triples(grid.m):
        km, k0, kp = tr
        acc = None
        for unt, ann, tim in _splits3(km):
            for gauge, cre in _splits2(k0):
                tab = KernelTable(ann, tim, gauge, cre)
                blk = k.blocks.get(tab)
                if blk is None:
                    continue
                mid_in = merge_sorted(ann, gauge)
                plus_in = merge_sorted(merge_sorted(tim, cre), kp)
                vec = a.value((unt, mid_in, plus_in))
                mat = permute_factors(blk, d, n, tab.row_pts(), k0,
                                      n, tab.col_pts(), mid_in)
                term = mat @ vec
                acc = term if acc is None else acc + term
        if acc is not None and np.max(np.abs(acc)) > 0:
            out.set_block(tr, acc)
    return out


def embed_j(a: FockVector) -> PseudoFockVector:
    """Trivial minus chain, uniform plus chain: the pseudo-isometry J."""
    basis = a.basis
    grid = basis.grid
    out = PseudoFockVector(grid)
    for mid in basis.chains:
        blk = np.asarray(a.block(mid), dtype=complex)
        if np.max(np.abs(blk)) == 0:
            continue
        mset = set(mid)
        for tr in triples(grid.m):
            if tr[0] == () and tr[1] == mid and not (set(tr[2]) & mset):
                out.set_block(tr, blk.copy())
    return out


def project_jstar(a: PseudoFockVector, basis: FockBasis) -> FockVector:
    """Pseudo-adjoint of the embedding: integrate the minus chain at empty
    plus chain."""
    grid = basis.grid
    out = FockVector(basis)
    for mid in basis.chains:
        acc = np.zeros(basis.block_dim(mid), dtype=complex)
        mset = set(mid)
        got = False
        for tr, blk in a.blocks.items():
            if tr[1] != mid or tr[2] != ():
                continue
            if set(tr[0]) & mset:
                continue
            acc += chain_weight(grid, tr[0]) * blk
            got = True
        if got:
            out.set_block(mid, acc)
    return out


def sandwich_matrix(k: Kernel, basis: FockBasis) -> np.ndarray:
    """Dense matrix of J* followed by the decomposable action and J."""
    dim = basis.dim
    out = np.zeros((dim, dim), dtype=complex)
    for j in range(dim):
        e = FockVector(basis)
        e.data[j] = 1.0
        image = project_jstar(decomposable_action(k, embed_j(e)), basis)
        out[:, j] = image.data
    return out


def pseudo_adjoint_defect(k: Kernel, a: PseudoFockVector,
                          b: PseudoFockVector) -> float:
    """| (K a | b) - (a | K* b) | for the pseudoscalar product."""
    lhs = pseudo_inner(decomposable_action(k, a), b)
    rhs = pseudo_inner(a, decomposable_action(k.adjoint(), b))
    return abs(lhs - rhs)


def truncated_j_bound(a: FockVector, t: float) -> tuple[float, float]:
    """Squared norm of the truncated embedding and its exponential bound."""
    basis = a.basis
    grid = basis.grid
    live = set(grid.points_before(t))
    lhs = 0.0
    for mid in basis.chains:
        if not set(mid) <= live:
            continue
        blk = a.block(mid)
        spectators = 1.0
        for p in live - set(mid):
            spectators *= 1.0 + grid.weights[p]
        lhs += chain_weight(grid, mid) * spectators * \
            float(np.sum(np.abs(blk) ** 2))
    w = basis.coordinate_weights(1.0)
    total = float(np.exp(t)) * float(np.sum(w * np.abs(a.data) ** 2))
    return lhs, total
