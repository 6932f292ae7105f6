"""The unital *-algebra of operator-valued table functions.

A kernel assigns to each table of four pairwise disjoint chains
(annihilation, time, gauge, creation) a complex block mapping
H (x) E(ann) (x) E(gauge)  ->  H (x) E(gauge) (x) E(cre).
Blocks are stored canonically: row factors ordered (gauge, cre), column
factors (ann, gauge), each slot ascending in time.  Absent tables are zero.

The product below realizes composition of the associated decomposable
operators: matching points of one factor's creation/gauge output legs are
contracted against the other factor's annihilation/gauge input legs, and
points annihilated immediately after being created surface in the product's
time slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .blocks import (Pts, conj_transpose, flat_dim, identity_extend,
                     merge_sorted, opnorm, permute_factors, zeros_block)
from .lattice import Grid, all_chains

__all__ = [
    "KernelTable", "table", "point_table", "Kernel", "unit_kernel",
    "kernel_product", "NoiseTriangular", "product_kernel", "WeightMatrix",
    "relative_bound", "kernel_from_integrand", "integrand_from_kernel",
    "point_shift_kernel", "block_unit_kernel", "kernel_to_json",
    "kernel_from_json", "KernelShapeError", "max_defect", "kernel_sup_norm",
    "iter_tables", "EMPTY_TABLE",
]

SLOTS = ("ann", "time", "gauge", "cre")


class KernelShapeError(ValueError):
    """A kernel block does not match the shape dictated by its table."""


class KernelTable(NamedTuple):
    ann: Pts
    time: Pts
    gauge: Pts
    cre: Pts

    def points(self) -> Pts:
        return tuple(sorted(self.ann + self.time + self.gauge + self.cre))

    def star(self) -> "KernelTable":
        """Involution: swap the annihilation and creation chains."""
        return KernelTable(self.cre, self.time, self.gauge, self.ann)

    def row_pts(self) -> Pts:
        return self.gauge + self.cre

    def col_pts(self) -> Pts:
        return self.ann + self.gauge

    def restrict(self, keep: Iterable[int]) -> "KernelTable":
        keep = set(keep)
        return KernelTable(*(tuple(p for p in sl if p in keep) for sl in self))

    def is_gauge_only(self) -> bool:
        return not (self.ann or self.time or self.cre)


def table(ann: Iterable[int] = (), time: Iterable[int] = (),
          gauge: Iterable[int] = (), cre: Iterable[int] = ()) -> KernelTable:
    t = KernelTable(tuple(sorted(ann)), tuple(sorted(time)),
                    tuple(sorted(gauge)), tuple(sorted(cre)))
    pts = t.ann + t.time + t.gauge + t.cre
    if len(set(pts)) != len(pts):
        raise ValueError(f"table chains must be pairwise disjoint: {t}")
    return t


def point_table(x: int, slot: str) -> KernelTable:
    if slot not in SLODICT:
        raise ValueError(f"unknown slot {slot!r}")
    return table(**{slot: (x,)})


SLODICT = {"ann": 0, "time": 1, "gauge": 2, "cre": 3}

EMPTY_TABLE = table()


@dataclass
class Kernel:
    """Finite map from tables to blocks over a fixed grid."""

    grid: Grid
    blocks: dict[KernelTable, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.grid.system_dim

    @property
    def d(self) -> int:
        return self.grid.noise_dim

    def expected_shape(self, t: KernelTable) -> tuple[int, int]:
        n, d = self.n, self.d
        return (flat_dim(n, len(t.row_pts()), d),
                flat_dim(n, len(t.col_pts()), d))

    def set_block(self, t: KernelTable, block) -> None:
        block = np.asarray(block, dtype=complex)
        if block.shape != self.expected_shape(t):
            raise KernelShapeError(
                f"table {t}: block shape {block.shape} != "
                f"{self.expected_shape(t)}")
        self.blocks[t] = block

    def add_block(self, t: KernelTable, block) -> None:
        block = np.asarray(block, dtype=complex)
        if t in self.blocks:
            self.blocks[t] = self.blocks[t] + block
        else:
            self.set_block(t, block)

    def value(self, t: KernelTable) -> np.ndarray:
        got = self.blocks.get(t)
        if got is not None:
            return got
        return np.zeros(self.expected_shape(t), dtype=complex)

    def prune(self, tol: float = 0.0) -> "Kernel":
        self.blocks = {t: b for t, b in self.blocks.items()
                       if np.max(np.abs(b)) > tol}
        return self

    def adjoint(self) -> "Kernel":
        out = Kernel(self.grid)
        n, d = self.n, self.d
        for t, b in self.blocks.items():
            ts = t.star()
            adj = conj_transpose(b)
            adj = permute_factors(adj, d,
                                  n, t.col_pts(), ts.row_pts(),
                                  n, t.row_pts(), ts.col_pts())
            out.add_block(ts, adj)
        return out

    def __add__(self, other: "Kernel") -> "Kernel":
        out = Kernel(self.grid, dict(self.blocks))
        for t, b in other.blocks.items():
            out.add_block(t, b)
        return out

    def __sub__(self, other: "Kernel") -> "Kernel":
        return self + (other * (-1.0))

    def __mul__(self, scalar: complex) -> "Kernel":
        return Kernel(self.grid,
                      {t: b * scalar for t, b in self.blocks.items()})

    __rmul__ = __mul__

    def system_premultiply(self, x: np.ndarray) -> "Kernel":
        """Apply a system operator after the kernel (on the output H leg)."""
        out = Kernel(self.grid)
        d = self.d
        for t, b in self.blocks.items():
            k = d ** len(t.row_pts())
            big = np.kron(np.asarray(x, dtype=complex), np.eye(k))
            out.set_block(t, big @ b)
        return out

    def system_postmultiply(self, x: np.ndarray) -> "Kernel":
        out = Kernel(self.grid)
        d = self.d
        for t, b in self.blocks.items():
            k = d ** len(t.col_pts())
            big = np.kron(np.asarray(x, dtype=complex), np.eye(k))
            out.set_block(t, b @ big)
        return out


def max_defect(a: Kernel, b: Kernel) -> float:
    """Largest blockwise spectral-norm difference over all tables."""
    worst = 0.0
    for t in set(a.blocks) | set(b.blocks):
        worst = max(worst, opnorm(a.value(t) - b.value(t)))
    return worst


def kernel_sup_norm(a: Kernel) -> float:
    return max((opnorm(b) for b in a.blocks.values()), default=0.0)


def unit_kernel(grid: Grid) -> Kernel:
    """The algebra unit: identity on every gauge-only table, zero elsewhere."""
    out = Kernel(grid)
    n, d = grid.system_dim, grid.noise_dim
    for chain in all_chains(grid.m):
        t = table(gauge=chain)
        out.set_block(t, np.eye(n * d ** len(chain), dtype=complex))
    return out


def block_unit_kernel(grid: Grid, x: np.ndarray) -> Kernel:
    """Identity-pattern kernel carrying a fixed system block x."""
    out = Kernel(grid)
    d = grid.noise_dim
    x = np.asarray(x, dtype=complex)
    for chain in all_chains(grid.m):
        out.set_block(table(gauge=chain), np.kron(x, np.eye(d ** len(chain))))
    return out


def kernel_product(s: Kernel, t: Kernel) -> Kernel:
    """Composition product of two kernels over the same grid.

    For each compatible pair of argument tables the creation/gauge legs of
    the right factor are contracted against the annihilation/gauge legs of
    the left one; a point created by the right factor and annihilated by the
    left lands in the product's time slot.
    """
    if s.grid is not t.grid and s.grid != t.grid:
        raise ValueError("kernel product requires a common grid")
    n, d = s.n, s.d
    out = Kernel(s.grid)
    for ts, sb in s.blocks.items():
        s_gauge = set(ts.gauge)
        s_out_only = set(ts.time) | set(ts.cre)
        for tt, tb in t.blocks.items():
            t_gauge = set(tt.gauge)
            if s_out_only & (set(tt.ann) | set(tt.time)):
                continue
            th_p0 = s_gauge - t_gauge          # created by t, gauged by s
            if not th_p0 <= set(tt.cre):
                continue
            th_0m = t_gauge - s_gauge          # gauged by t, annihilated by s
            if not th_0m <= set(ts.ann):
                continue
            if set(ts.ann) - th_0m != set(tt.cre) - th_p0:
                continue                       # t-created, s-annihilated
            th_pm = tuple(sorted(set(ts.ann) - th_0m))
            gauge0 = tuple(sorted(s_gauge & t_gauge))
            out_table = KernelTable(
                merge_sorted(tt.ann, tuple(sorted(th_0m))),
                merge_sorted(merge_sorted(ts.time, tt.time), th_pm),
                gauge0,
                merge_sorted(ts.cre, tuple(sorted(th_p0))))
            aligned = permute_factors(tb, d,
                                      n, tt.row_pts(), ts.col_pts(),
                                      n, tt.col_pts(), tt.col_pts())
            prod = sb @ aligned
            prod = permute_factors(prod, d,
                                   n, ts.row_pts(), out_table.row_pts(),
                                   n, tt.col_pts(), out_table.col_pts())
            out.add_block(out_table, prod)
    return out


# ---------------------------------------------------------------------------
# per-point triangular data over the noise space


@dataclass
class NoiseTriangular:
    """Per-point triangular matrices acting on the noise space alone.

    Entry shapes per point: gauge (d, d), creation (d,), annihilation (d,),
    time scalar.  The unit corners are implicit.
    """

    d: int
    g00: list[np.ndarray]
    gp0: list[np.ndarray]
    g0m: list[np.ndarray]
    gpm: list[complex]

    @classmethod
    def identity(cls, m: int, d: int) -> "NoiseTriangular":
        return cls(d,
                   [np.eye(d, dtype=complex) for _ in range(m)],
                   [np.zeros(d, dtype=complex) for _ in range(m)],
                   [np.zeros(d, dtype=complex) for _ in range(m)],
                   [0.0 + 0.0j for _ in range(m)])

    @property
    def m(self) -> int:
        return len(self.g00)

    def as_matrix(self, x: int) -> np.ndarray:
        """Full (2+d) x (2+d) triangular matrix at point x."""
        d = self.d
        out = np.zeros((2 + d, 2 + d), dtype=complex)
        out[0, 0] = 1.0
        out[-1, -1] = 1.0
        out[0, 1:1 + d] = self.g0m[x]
        out[0, -1] = self.gpm[x]
        out[1:1 + d, 1:1 + d] = self.g00[x]
        out[1:1 + d, -1] = self.gp0[x]
        return out

    def star(self) -> "NoiseTriangular":
        return NoiseTriangular(
            self.d,
            [g.conj().T for g in self.g00],
            [v.conj() for v in self.g0m],
            [v.conj() for v in self.gp0],
            [np.conj(s) for s in self.gpm])

    def __matmul__(self, other: "NoiseTriangular") -> "NoiseTriangular":
        g00 = [a @ b for a, b in zip(self.g00, other.g00)]
        gp0 = [a @ b + c for a, b, c in zip(self.g00, other.gp0, self.gp0)]
        g0m = [a @ b + c for a, b, c in zip(self.g0m, other.g00, other.g0m)]
        gpm = [a + b + np.dot(u, v) for a, b, u, v in
               zip(self.gpm, other.gpm, self.g0m, other.gp0)]
        return NoiseTriangular(self.d, g00, gp0, g0m, gpm)

    def truncate(self, grid: Grid, t: float) -> "NoiseTriangular":
        """Replace entries at points with time >= t by the identity."""
        live = set(grid.points_before(t))
        ident = NoiseTriangular.identity(self.m, self.d)
        pick = lambda seq, idseq: [seq[x] if x in live else idseq[x]
                                   for x in range(self.m)]
        return NoiseTriangular(self.d, pick(self.g00, ident.g00),
                               pick(self.gp0, ident.gp0),
                               pick(self.g0m, ident.g0m),
                               pick(self.gpm, ident.gpm))


def product_kernel(grid: Grid, x: np.ndarray, f: NoiseTriangular,
                   tables: Iterable[KernelTable] | None = None) -> Kernel:
    """Kernel whose value is x tensored with per-point triangular factors.

    The gauge entry of f supplies one (d, d) factor per gauge point, the
    creation/annihilation entries one column/row factor, and the time entry
    a scalar per time point.  f equal to the per-point identity gives the
    identity-pattern kernel for x.
    """
    if f.m != grid.m or f.d != grid.noise_dim:
        raise KernelShapeError("noise data does not match the grid")
    x = np.asarray(x, dtype=complex)
    if x.shape != (grid.system_dim, grid.system_dim):
        raise KernelShapeError("system block has wrong shape")
    out = Kernel(grid)
    if tables is None:
        tables = iter_tables(grid.m)
    n, d = grid.system_dim, grid.noise_dim
    for t in tables:
        scal = 1.0 + 0.0j
        for p in t.time:
            scal *= f.gpm[p]
        if scal == 0:
            continue
        mat = x
        for p in t.gauge:
            mat = np.kron(mat, f.g00[p])
        for p in t.cre:
            mat = np.kron(mat, f.gp0[p].reshape(d, 1))
        for p in t.ann:
            mat = np.kron(mat, f.g0m[p].reshape(1, d))
        if np.max(np.abs(mat)) == 0:
            continue
        mat = permute_factors(scal * mat, d,
                              n, t.gauge + t.cre, t.row_pts(),
                              n, t.gauge + t.ann, t.col_pts())
        out.set_block(t, mat)
    return out


def iter_tables(m: int, pts: Pts | None = None):
    """Every table over the given points (default: the whole grid)."""
    import itertools
    pts = tuple(range(m)) if pts is None else pts
    for labels in itertools.product(range(5), repeat=len(pts)):
        slots: list[list[int]] = [[], [], [], []]
        for p, lab in zip(pts, labels):
            if lab:
                slots[lab - 1].append(p)
        yield KernelTable(*(tuple(s) for s in slots))


# ---------------------------------------------------------------------------
# relative bounds


@dataclass
class WeightMatrix:
    """Per-point nonnegative triangular weights with unit corners."""

    z0m: np.ndarray
    zpm: np.ndarray
    z00: np.ndarray
    zp0: np.ndarray

    def __post_init__(self):
        self.z0m = np.asarray(self.z0m, dtype=float)
        self.zpm = np.asarray(self.zpm, dtype=float)
        self.z00 = np.asarray(self.z00, dtype=float)
        self.zp0 = np.asarray(self.zp0, dtype=float)
        if np.any(self.z0m < 0) or np.any(self.zpm < 0) or \
           np.any(self.z00 < 0) or np.any(self.zp0 < 0):
            raise ValueError("weight entries must be nonnegative")

    @classmethod
    def ones(cls, m: int) -> "WeightMatrix":
        z = np.zeros(m)
        return cls(z.copy(), z.copy(), np.ones(m), z.copy())

    def star(self) -> "WeightMatrix":
        return WeightMatrix(self.zp0.copy(), self.zpm.copy(),
                            self.z00.copy(), self.z0m.copy())

    def star_product(self) -> "WeightMatrix":
        """Pointwise product of the flipped-conjugate weights with self."""
        return WeightMatrix(
            self.z0m + self.zp0 * self.z00,
            2.0 * self.zpm + self.zp0 ** 2,
            self.z00 ** 2,
            self.z00 * self.zp0 + self.z0m)

    def table_product(self, t: KernelTable) -> float:
        p = 1.0
        for x in t.ann:
            p *= self.z0m[x]
        for x in t.time:
            p *= self.zpm[x]
        for x in t.gauge:
            p *= self.z00[x]
        for x in t.cre:
            p *= self.zp0[x]
        return p


def relative_bound(k: Kernel, zeta: WeightMatrix) -> float:
    """Largest blockwise spectral norm divided by the weight product.

    Returns inf when a table with a nonzero block has zero weight product.
    """
    worst = 0.0
    for t, b in k.blocks.items():
        nb = opnorm(b)
        if nb == 0.0:
            continue
        denom = zeta.table_product(t)
        if denom == 0.0:
            return float("inf")
        worst = max(worst, nb / denom)
    return worst


# ---------------------------------------------------------------------------
# correspondence between kernels and their integrands


def _free_points(grid: Grid, t: KernelTable) -> Pts:
    used = set(t.points())
    return tuple(p for p in range(grid.m) if p not in used)


def kernel_from_integrand(l: Kernel) -> Kernel:
    """Sum the integrand over gauge-slot identity extensions."""
    import itertools
    out = Kernel(l.grid)
    n, d = l.n, l.d
    for lt, lb in l.blocks.items():
        free = _free_points(l.grid, lt)
        for r in range(len(free) + 1):
            for s in itertools.combinations(free, r):
                gauge = merge_sorted(lt.gauge, s)
                ot = KernelTable(lt.ann, lt.time, gauge, lt.cre)
                ext = identity_extend(lb, d, n, lt.row_pts(), n,
                                      lt.col_pts(), s,
                                      ot.row_pts(), ot.col_pts())
                out.add_block(ot, ext)
    return out.prune()


def integrand_from_kernel(k: Kernel) -> Kernel:
    """Invert the gauge-extension sum by inclusion-exclusion."""
    import itertools
    out = Kernel(k.grid)
    n, d = k.n, k.d
    for kt, kb in k.blocks.items():
        free = _free_points(k.grid, kt)
        for r in range(len(free) + 1):
            for s in itertools.combinations(free, r):
                gauge = merge_sorted(kt.gauge, s)
                ot = KernelTable(kt.ann, kt.time, gauge, kt.cre)
                ext = identity_extend(kb, d, n, kt.row_pts(), n,
                                      kt.col_pts(), s,
                                      ot.row_pts(), ot.col_pts())
                out.add_block(ot, (-1.0) ** r * ext)
    return out.prune(1e-300)


def kernel_without_point(k: Kernel, x: int) -> Kernel:
    """Restriction of a kernel to tables avoiding the given point."""
    return Kernel(k.grid, {t: b for t, b in k.blocks.items()
                           if x not in t.points()})


def point_shift_kernel(k: Kernel, x: int, slot: str) -> Kernel:
    """The kernel obtained by pinning point x into the given slot.

    Only available for one-dimensional noise, where the pinned point carries
    no tensor factor.
    """
    if k.d != 1:
        raise NotImplementedError("point shifts require noise_dim == 1")
    idx = SLODICT[slot]
    out = Kernel(k.grid)
    for t, b in k.blocks.items():
        if x not in t[idx]:
            continue
        slots = list(t)
        slots[idx] = tuple(p for p in slots[idx] if p != x)
        out.add_block(KernelTable(*slots), b)
    return out


# ---------------------------------------------------------------------------
# serialization


def _encode_complex_matrix(mat: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in mat]


def _decode_complex_matrix(rows: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows],
                    dtype=complex)


def kernel_to_json(k: Kernel) -> str:
    doc = {
        "format": "fockflow-kernel",
        "version": 1,
        "grid": {
            "times": list(k.grid.times),
            "weights": list(k.grid.weights),
            "noise_dim": k.grid.noise_dim,
            "system_dim": k.grid.system_dim,
        },
        "tables": [
            {
                "ann": list(t.ann), "time": list(t.time),
                "gauge": list(t.gauge), "cre": list(t.cre),
                "block": _encode_complex_matrix(b),
            }
            for t, b in sorted(k.blocks.items())
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def kernel_from_json(text: str) -> Kernel:
    doc = json.loads(text)
    if doc.get("format") != "fockflow-kernel":
        raise ValueError("not a kernel document")
    g = doc["grid"]
    grid = Grid(tuple(g["times"]), tuple(g["weights"]),
                g["noise_dim"], g["system_dim"])
    out = Kernel(grid)
    for entry in doc["tables"]:
        t = table(entry["ann"], entry["time"], entry["gauge"], entry["cre"])
        out.set_block(t, _decode_complex_matrix(entry["block"]))
    return out
