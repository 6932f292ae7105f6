"""Discretized chain space: grid, chains, Fock basis, scale norms.

The base space is a finite list of abstract points with strictly increasing
times and positive quadrature weights.  Chains are subsets of grid points
kept in time order; the truncated Fock space is spanned by all chains, with
a block of dimension n * d**|chain| per chain (n = system dimension,
d = noise multiplicity).  Integrals over the chain space become weighted
sums with weight w(chain) = prod of point weights.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .blocks import Pts, merge_sorted

__all__ = [
    "Grid", "all_chains", "chain_weight", "FockBasis", "FockVector",
    "scale_norm", "weighted_inner", "point_derivative", "sum_integral_split",
]


@dataclass(frozen=True)
class Grid:
    """A finite time grid with quadrature weights and space dimensions."""

    times: tuple[float, ...]
    weights: tuple[float, ...]
    noise_dim: int = 1
    system_dim: int = 1

    def __post_init__(self):
        if len(self.times) != len(self.weights):
            raise ValueError("times and weights must have equal length")
        if any(t2 <= t1 for t1, t2 in zip(self.times, self.times[1:])):
            raise ValueError("grid times must be strictly increasing")
        if any(w <= 0 for w in self.weights):
            raise ValueError("grid weights must be positive")
        if self.noise_dim < 1 or self.system_dim < 1:
            raise ValueError("noise_dim and system_dim must be >= 1")

    @classmethod
    def uniform(cls, m: int, t_max: float = 1.0, noise_dim: int = 1,
                system_dim: int = 1) -> "Grid":
        """Uniform grid of m midpoints on [0, t_max), weight t_max/m each.

        Midpoint times keep every point strictly inside the interval, so a
        cutoff at a cell boundary k*t_max/m captures exactly k points with
        total weight k*t_max/m.
        """
        if m < 0:
            raise ValueError("m must be nonnegative")
        dt = t_max / m if m else 0.0
        times = tuple((i + 0.5) * dt for i in range(m))
        return cls(times, (dt,) * m, noise_dim, system_dim)

    @property
    def m(self) -> int:
        return len(self.times)

    def points_before(self, t: float) -> Pts:
        return tuple(i for i, s in enumerate(self.times) if s < t)

    def weight(self, x: int) -> float:
        return self.weights[x]

    @property
    def t_max(self) -> float:
        """Total quadrature mass of the grid."""
        return float(sum(self.weights))


def all_chains(m: int) -> list[Pts]:
    """All chains over an m-point grid, graded by size then lexicographic.

    This order fixes the global basis layout used everywhere else.
    """
    out: list[Pts] = []
    for k in range(m + 1):
        out.extend(itertools.combinations(range(m), k))
    return out


def chain_weight(grid: Grid, chain: Pts) -> float:
    w = 1.0
    for x in chain:
        w *= grid.weights[x]
    return w


class FockBasis:
    """Basis layout of the truncated Fock space H (x) F over a grid.

    Coordinates are grouped by chain (graded-lex order); within a chain's
    block the index flattens (system index, one noise factor per point in
    time order) in C order.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.n = grid.system_dim
        self.d = grid.noise_dim
        self.chains: list[Pts] = all_chains(grid.m)
        self.index: dict[Pts, int] = {c: i for i, c in enumerate(self.chains)}
        self.offsets = np.zeros(len(self.chains) + 1, dtype=np.int64)
        for i, c in enumerate(self.chains):
            self.offsets[i + 1] = self.offsets[i] + self.block_dim(c)
        self.dim = int(self.offsets[-1])
        self._chain_weights = np.array(
            [chain_weight(grid, c) for c in self.chains])

    def block_dim(self, chain: Pts) -> int:
        return self.n * self.d ** len(chain)

    def block_slice(self, chain: Pts) -> slice:
        i = self.index[chain]
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def coordinate_weights(self, xi: float = 1.0) -> np.ndarray:
        """Per-coordinate weight xi**|chain| * w(chain), expanded to dim."""
        out = np.empty(self.dim)
        for i, c in enumerate(self.chains):
            out[self.offsets[i]:self.offsets[i + 1]] = \
                (xi ** len(c)) * self._chain_weights[i]
        return out

    def scale_diag(self, xi: float) -> np.ndarray:
        """Diagonal of the isometry onto plain coordinates: sqrt of weights."""
        return np.sqrt(self.coordinate_weights(xi))


@dataclass
class FockVector:
    """Vector of the truncated space, stored as one flat coordinate array."""

    basis: FockBasis
    data: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.data is None:
            self.data = np.zeros(self.basis.dim, dtype=complex)
        else:
            self.data = np.asarray(self.data, dtype=complex)
            if self.data.shape != (self.basis.dim,):
                raise ValueError("coordinate array does not match basis")

    @classmethod
    def vacuum(cls, basis: FockBasis) -> "FockVector":
        v = cls(basis)
        v.data[0:basis.n] = 0.0
        v.data[0] = 1.0
        return v

    def block(self, chain: Pts) -> np.ndarray:
        return self.data[self.basis.block_slice(chain)]

    def set_block(self, chain: Pts, values) -> None:
        values = np.asarray(values, dtype=complex).reshape(-1)
        sl = self.basis.block_slice(chain)
        if values.shape[0] != sl.stop - sl.start:
            raise ValueError(f"block for chain {chain} has wrong size")
        self.data[sl] = values

    def copy(self) -> "FockVector":
        return FockVector(self.basis, self.data.copy())


def scale_norm(vec: FockVector, xi: float = 1.0) -> float:
    """Scaled Fock norm: sqrt of sum over chains of xi^|k| w(k) |block|^2."""
    if xi <= 0:
        raise ValueError("scale parameter must be positive")
    w = vec.basis.coordinate_weights(xi)
    return float(np.sqrt(np.sum(w * np.abs(vec.data) ** 2)))


def weighted_inner(a: FockVector, b: FockVector) -> complex:
    """Inner product of the weighted space (xi = 1 scale)."""
    w = a.basis.coordinate_weights(1.0)
    return complex(np.sum(w * np.conj(a.data) * b.data))


def point_derivative(vec: FockVector, theta: Pts) -> dict[Pts, np.ndarray]:
    """Chain-shift derivative: chain -> block of vec at (chain + theta).

    Returned blocks are laid out with the chain factors first (time order)
    followed by the theta factors (time order); chains meeting theta are
    absent from the result.
    """
    basis = vec.basis
    n, d = basis.n, basis.d
    theta = tuple(sorted(theta))
    tset = set(theta)
    out: dict[Pts, np.ndarray] = {}
    for chain in basis.chains:
        if tset & set(chain):
            continue
        union = merge_sorted(chain, theta)
        block = vec.block(union)
        if d > 1 and theta:
            src = union
            dst = chain + theta
            t = block.reshape((n,) + (d,) * len(union))
            axes = [0] + [1 + src.index(p) for p in dst]
            block = t.transpose(axes).reshape(-1)
        out[chain] = np.asarray(block, dtype=complex)
    return out


def _partitions3(chain: Pts):
    """All ordered splittings of a chain into three disjoint subchains."""
    for labels in itertools.product(range(3), repeat=len(chain)):
        parts: list[list[int]] = [[], [], []]
        for x, lab in zip(chain, labels):
            parts[lab].append(x)
        yield tuple(tuple(p) for p in parts)


def sum_integral_split(grid: Grid, f) -> tuple[float, float]:
    """Two evaluations of the sum/integral exchange over chain triples.

    Left: sum over chains of w(chain) times the sum of f over 3-part
    splittings.  Right: independent weighted triple sum over pairwise
    disjoint chains.  Both agree identically; exposed as a self test.
    """
    chains = all_chains(grid.m)
    lhs = 0.0
    for theta in chains:
        s = 0.0
        for pm, p0, pp in _partitions3(theta):
            s += f(pm, p0, pp)
        lhs += chain_weight(grid, theta) * s
    rhs = 0.0
    for a in chains:
        sa = set(a)
        for b in chains:
            if sa & set(b):
                continue
            sab = sa | set(b)
            for c in chains:
                if sab & set(c):
                    continue
                rhs += (chain_weight(grid, a) * chain_weight(grid, b)
                        * chain_weight(grid, c) * f(a, b, c))
    return lhs, rhs
