"""Chronologically ordered evolutions on the truncated Fock lattice.

A generator field assigns to each grid point a triangular block matrix with
identity corners; the evolution kernel at a table is the time-ordered
semitensor product of the per-point factors over the table's past points,
with identity factors on future gauge points and zero whenever a future
point sits in an off-diagonal slot.  Its representation solves the
quantum stochastic evolution equation, is isometric exactly at kernel
level for pseudo-unitary generators, and is unitary up to a grid-size
defect at operator level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .blocks import opnorm, permute_factors
from .ito import TriangularMatrix, pseudo_conjugate
from .kernels import (Kernel, KernelTable, NoiseTriangular, SLODICT,
                      block_unit_kernel, iter_tables, product_kernel, table)
from .lattice import FockBasis, Grid
from .fockrep import (IntegrandTable, iota, operator_scale_norm,
                      single_integral, epsilon_bound)

__all__ = [
    "GeneratorField", "HamiltonianField", "hamiltonian_to_scattering",
    "pseudo_unitarity_check", "chronological_kernel", "evolution_step",
    "solve_evolution", "PointGenerator", "canonical_decomposition",
    "second_quantization", "system_trivial_field",
    "evolution_norm_bound_check", "evolution_equation_defect",
    "vacuum_amplitude", "SingularGaugeError", "phi_functions",
    "embed_point_operator",
]


class SingularGaugeError(ValueError):
    """The gauge block does not determine the canonical splitting."""


@dataclass
class GeneratorField:
    """Per-point triangular scattering factors with identity corners.

    Blocks per point x: gauge (n d, n d) including the identity part,
    creation (n d, n), annihilation (n, n d), time (n, n).
    """

    grid: Grid
    f00: list[np.ndarray]
    fp0: list[np.ndarray]
    f0m: list[np.ndarray]
    fpm: list[np.ndarray]

    def __post_init__(self):
        n, d = self.grid.system_dim, self.grid.noise_dim
        shapes = {"f00": (n * d, n * d), "fp0": (n * d, n),
                  "f0m": (n, n * d), "fpm": (n, n)}
        for name, sh in shapes.items():
            lst = [np.asarray(b, dtype=complex) for b in getattr(self, name)]
            if len(lst) != self.grid.m or any(b.shape != sh for b in lst):
                raise ValueError(f"field {name}: need {self.grid.m} blocks "
                                 f"of shape {sh}")
            setattr(self, name, lst)

    @classmethod
    def identity(cls, grid: Grid) -> "GeneratorField":
        n, d = grid.system_dim, grid.noise_dim
        return cls(grid,
                   [np.eye(n * d) for _ in range(grid.m)],
                   [np.zeros((n * d, n)) for _ in range(grid.m)],
                   [np.zeros((n, n * d)) for _ in range(grid.m)],
                   [np.zeros((n, n)) for _ in range(grid.m)])

    def l00(self, x: int) -> np.ndarray:
        n, d = self.grid.system_dim, self.grid.noise_dim
        return self.f00[x] - np.eye(n * d)

    def point_triangular(self, x: int) -> TriangularMatrix:
        n, d = self.grid.system_dim, self.grid.noise_dim
        out = TriangularMatrix.identity(n, d)
        out.ann = self.f0m[x]
        out.time = self.fpm[x]
        out.gauge = self.f00[x]
        out.cre = self.fp0[x]
        return out


@dataclass
class HamiltonianField:
    """Per-point triangular Hamiltonian data (zero corners)."""

    grid: Grid
    h00: list[np.ndarray]
    hp0: list[np.ndarray]
    h0m: list[np.ndarray]
    hpm: list[np.ndarray]

    def __post_init__(self):
        n, d = self.grid.system_dim, self.grid.noise_dim
        shapes = {"h00": (n * d, n * d), "hp0": (n * d, n),
                  "h0m": (n, n * d), "hpm": (n, n)}
        for name, sh in shapes.items():
            lst = [np.asarray(b, dtype=complex) for b in getattr(self, name)]
            if len(lst) != self.grid.m or any(b.shape != sh for b in lst):
                raise ValueError(f"field {name}: need {self.grid.m} blocks "
                                 f"of shape {sh}")
            setattr(self, name, lst)

    def pseudo_hermitian_defect(self) -> float:
        worst = 0.0
        for x in range(self.grid.m):
            worst = max(
                worst,
                opnorm(self.h00[x] - self.h00[x].conj().T),
                opnorm(self.hp0[x] - self.h0m[x].conj().T),
                opnorm(self.hpm[x] - self.hpm[x].conj().T))
        return worst


def phi_functions(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """exp(a) together with the first two entire divided differences.

    Returns (exp(a), (exp(a)-1)/a, (exp(a)-1-a)/a^2) evaluated as entire
    functions via one exponential of an augmented block matrix, so singular
    a needs no special casing.
    """
    a = np.asarray(a, dtype=complex)
    k = a.shape[0]
    big = np.zeros((3 * k, 3 * k), dtype=complex)
    big[:k, :k] = a
    big[:k, k:2 * k] = np.eye(k)
    big[k:2 * k, 2 * k:] = np.eye(k)
    e = scipy.linalg.expm(big)
    return e[:k, :k], e[:k, k:2 * k], e[:k, 2 * k:]


def hamiltonian_to_scattering(h: HamiltonianField) -> GeneratorField:
    """Triangular exponential exp(-i h) of a Hamiltonian field, in closed
    block form through the entire divided differences of the gauge block."""
    grid = h.grid
    f00, fp0, f0m, fpm = [], [], [], []
    for x in range(grid.m):
        e, phi1, phi2 = phi_functions(-1j * h.h00[x])
        f00.append(e)
        fp0.append(phi1 @ (-1j * h.hp0[x]))
        f0m.append((-1j * h.h0m[x]) @ phi1)
        fpm.append(-(h.h0m[x] @ phi2 @ h.hp0[x]) - 1j * h.hpm[x])
    return GeneratorField(grid, f00, fp0, f0m, fpm)


def pseudo_unitarity_check(f: GeneratorField) -> float:
    """Largest pointwise defect of star(S) S = identity."""
    worst = 0.0
    n, d = f.grid.system_dim, f.grid.noise_dim
    ident = TriangularMatrix.identity(n, d)
    for x in range(f.grid.m):
        s = f.point_triangular(x)
        worst = max(worst, (pseudo_conjugate(s) @ s - ident).norm())
    return worst


# ---------------------------------------------------------------------------
# chronological products


def _semitensor_point(blk: np.ndarray, sub: KernelTable, f: GeneratorField,
                      x: int, slot: str) -> tuple[KernelTable, np.ndarray]:
    """Left-multiply a canonical kernel block by one per-point factor."""
    grid = f.grid
    n, d = grid.system_dim, grid.noise_dim
    rows = sub.row_pts()
    cols = sub.col_pts()
    rest = np.eye(d ** len(rows), dtype=complex)
    if slot == "time":
        out = np.kron(f.fpm[x], rest) @ blk
        new_rows, new_cols = rows, cols
    elif slot == "cre":
        out = np.kron(f.fp0[x], rest) @ blk
        new_rows, new_cols = (x,) + rows, cols
    elif slot == "gauge":
        ext = np.kron(blk, np.eye(d))   # rows + x last, cols + x last
        ext = permute_factors(ext, d, n, rows + (x,), (x,) + rows,
                              n, cols + (x,), cols + (x,))
        out = np.kron(f.f00[x], rest) @ ext
        new_rows, new_cols = (x,) + rows, cols + (x,)
    elif slot == "ann":
        ext = np.kron(blk, np.eye(d))
        ext = permute_factors(ext, d, n, rows + (x,), (x,) + rows,
                              n, cols + (x,), cols + (x,))
        out = np.kron(f.f0m[x], rest) @ ext
        new_rows, new_cols = rows, cols + (x,)
    else:
        raise ValueError(f"unknown slot {slot!r}")
    slots = {k: list(getattr(sub, k)) for k in ("ann", "time", "gauge",
                                                "cre")}
    slots[slot].append(x)
    new_tab = table(**slots)
    out = permute_factors(out, d, n, new_rows, new_tab.row_pts(),
                          n, new_cols, new_tab.col_pts())
    return new_tab, out


def chrono_table_value(f: GeneratorField, t0: np.ndarray, tab: KernelTable,
                       t: float) -> np.ndarray | None:
    """Value of the chronological kernel at one table, or None when zero."""
    grid = f.grid
    n, d = grid.system_dim, grid.noise_dim
    live = set(grid.points_before(t))
    slot_of: dict[int, str] = {}
    for slot in ("ann", "time", "gauge", "cre"):
        for p in getattr(tab, slot):
            slot_of[p] = slot
    future = [p for p in tab.points() if p not in live]
    if any(slot_of[p] != "gauge" for p in future):
        return None
    cur = table()
    blk = np.asarray(t0, dtype=complex).reshape(n, n)
    for p in sorted(p for p in tab.points() if p in live):
        cur, blk = _semitensor_point(blk, cur, f, p, slot_of[p])
    if future:
        new = tuple(sorted(future))
        from .blocks import identity_extend
        target = table(ann=cur.ann, time=cur.time,
                       gauge=tuple(sorted(cur.gauge + new)), cre=cur.cre)
        blk = identity_extend(blk, d, n, cur.row_pts(), n, cur.col_pts(),
                              new, target.row_pts(), target.col_pts())
    return blk


def chronological_kernel(t: float, f: GeneratorField, t0: np.ndarray,
                         tables=None) -> Kernel:
    """Materialize the chronological-product kernel on the given tables."""
    grid = f.grid
    out = Kernel(grid)
    if tables is None:
        tables = iter_tables(grid.m)
    for tab in tables:
        blk = chrono_table_value(f, t0, tab, t)
        if blk is not None and np.max(np.abs(blk)) > 0:
            out.set_block(tab, blk)
    return out


def evolution_step(k: Kernel, f: GeneratorField, x: int) -> Kernel:
    """One recurrency step: multiply every table containing x by its
    per-point factor; tables avoiding x pass through unchanged."""
    out = Kernel(k.grid)
    for tab, blk in k.blocks.items():
        out.add_block(tab, blk)
    for tab in iter_tables(k.grid.m):
        if x not in tab.points():
            continue
        slot = next(s for s in ("ann", "time", "gauge", "cre")
                    if x in getattr(tab, s))
        slots = {s: tuple(p for p in getattr(tab, s) if p != x)
                 for s in ("ann", "time", "gauge", "cre")}
        sub = table(**slots)
        prev = k.value(sub)
        new_tab, blk = _semitensor_point(prev, sub, f, x, slot)
        out.blocks[new_tab] = blk
    return out.prune()


def solve_evolution(t: float, f: GeneratorField, t0: np.ndarray,
                    basis: FockBasis) -> np.ndarray:
    """Dense solution operator of the evolution equation at time t."""
    return iota(chronological_kernel(t, f, t0), basis)


def vacuum_amplitude(u: np.ndarray, basis: FockBasis) -> np.ndarray:
    """System block of an operator on the vacuum sector."""
    n = basis.n
    return u[:n, :n]


# ---------------------------------------------------------------------------
# canonical splitting of a pseudo-unitary generator


@dataclass
class PointGenerator:
    """Strict triangular generator data at a single point."""

    l00: np.ndarray
    lp0: np.ndarray
    l0m: np.ndarray
    lpm: np.ndarray

    def triangular(self, n: int, d: int) -> TriangularMatrix:
        out = TriangularMatrix.identity(n, d)
        out.gauge = out.gauge + self.l00
        out.ann = self.l0m
        out.time = self.lpm
        out.cre = self.lp0
        return out


def canonical_decomposition(f: GeneratorField, x: int,
                            ker_tol: float = 1e-9,
                            gap_tol: float = 1e-6) \
        -> tuple[PointGenerator, PointGenerator, PointGenerator]:
    """Split one point's generator into gauge-driven, noise-driven and
    drift parts, each generating a pseudo-unitary factor.

    The creation block is resolved along the range and kernel of the gauge
    deviation; eigenvalues of the gauge deviation falling between the two
    tolerances leave the split ill-determined and raise SingularGaugeError.
    """
    n, d = f.grid.system_dim, f.grid.noise_dim
    nd = n * d
    l00 = f.l00(x)
    if opnorm(l00 @ l00.conj().T - l00.conj().T @ l00) > 1e-10:
        raise SingularGaugeError("gauge deviation is not normal; the "
                                 "range/kernel split is undefined")
    tmat, z = scipy.linalg.schur(l00, output="complex")
    evals = np.diag(tmat)
    small = np.abs(evals) <= ker_tol
    if np.any((np.abs(evals) > ker_tol) & (np.abs(evals) < gap_tol)):
        raise SingularGaugeError(
            "gauge deviation has near-singular directions; the canonical "
            "creation split is not determined")
    zk = z[:, small]
    p_ker = zk @ zk.conj().T
    p_ran = np.eye(nd) - p_ker
    lp0 = f.fp0[x]
    e_blk = -p_ker @ lp0
    l00f = p_ran @ lp0
    f_rot = np.linalg.pinv(l00) @ l00f
    part1 = PointGenerator(
        l00=l00,
        lp0=l00f,
        l0m=f_rot.conj().T @ l00,
        lpm=f_rot.conj().T @ l00f)
    part2 = PointGenerator(
        l00=np.zeros((nd, nd), dtype=complex),
        lp0=-e_blk,
        l0m=e_blk.conj().T,
        lpm=-0.5 * e_blk.conj().T @ e_blk)
    part3 = PointGenerator(
        l00=np.zeros((nd, nd), dtype=complex),
        lp0=np.zeros((nd, n), dtype=complex),
        l0m=np.zeros((n, nd), dtype=complex),
        lpm=f.fpm[x] - part1.lpm - part2.lpm)
    return part1, part2, part3


# ---------------------------------------------------------------------------
# second quantization


def system_trivial_field(grid: Grid, l: NoiseTriangular) -> GeneratorField:
    """Lift per-point noise-space generators to a generator field acting
    trivially on the system."""
    n, d = grid.system_dim, grid.noise_dim
    eye_n = np.eye(n)
    return GeneratorField(
        grid,
        [np.kron(eye_n, np.eye(d) + l.g00[x]) for x in range(grid.m)],
        [np.kron(eye_n, l.gp0[x].reshape(d, 1)) for x in range(grid.m)],
        [np.kron(eye_n, l.g0m[x].reshape(1, d)) for x in range(grid.m)],
        [l.gpm[x] * eye_n for x in range(grid.m)])


def second_quantization(t: float, l: NoiseTriangular,
                        basis: FockBasis) -> np.ndarray:
    """Functorial lift of per-point one-particle deviations: the
    representation of the product kernel of 1 + l truncated at t."""
    grid = basis.grid
    full = NoiseTriangular.identity(grid.m, grid.noise_dim)
    for x in range(grid.m):
        full.g00[x] = full.g00[x] + l.g00[x]
        full.gp0[x] = l.gp0[x].copy()
        full.g0m[x] = l.g0m[x].copy()
        full.gpm[x] = l.gpm[x]
    k = product_kernel(grid, np.eye(grid.system_dim), full.truncate(grid, t))
    return iota(k, basis)


# ---------------------------------------------------------------------------
# equation defect and norm bound


def embed_point_operator(block: np.ndarray, basis: FockBasis, x: int,
                         kind: str) -> np.ndarray:
    """Lift a per-point system-level block to the Fock level with the point
    factor as a trailing leg and identity on spectating chains."""
    from .blocks import identity_extend
    n, d = basis.n, basis.d
    row_pts = (x,) if kind in ("00", "p0") else ()
    col_pts = (x,) if kind in ("00", "0m") else ()
    dr, dc = d ** len(row_pts), d ** len(col_pts)
    out = np.zeros((basis.dim * dr, basis.dim * dc), dtype=complex)
    for rho in basis.chains:
        if x in rho:
            continue
        ext = identity_extend(block, d, n, row_pts, n, col_pts, rho,
                              rho + row_pts, rho + col_pts)
        rs = basis.block_slice(rho)
        out[rs.start * dr:rs.stop * dr, rs.start * dc:rs.stop * dc] = ext
    return out


def evolution_equation_defect(t: float, f: GeneratorField, t0: np.ndarray,
                              basis: FockBasis) -> float:
    """Defect of the integral form of the evolution equation, with the
    integrand composed from the per-point generator and the running
    solution."""
    grid = basis.grid
    d = basis.d
    u0 = iota(block_unit_kernel(grid, t0), basis)
    dtab = IntegrandTable()
    eye_d = np.eye(d)
    for x in grid.points_before(t):
        ux = solve_evolution(grid.times[x], f, t0, basis)
        uxd = np.kron(ux, eye_d)
        dtab.d00[x] = embed_point_operator(f.l00(x), basis, x, "00") @ uxd
        dtab.dp0[x] = embed_point_operator(f.fp0[x], basis, x, "p0") @ ux
        dtab.d0m[x] = embed_point_operator(f.f0m[x], basis, x, "0m") @ uxd
        dtab.dpm[x] = embed_point_operator(f.fpm[x], basis, x, "pm") @ ux
    ut = solve_evolution(t, f, t0, basis)
    return opnorm(ut - u0 - single_integral(t, dtab, basis))


def evolution_norm_bound_check(f: GeneratorField, t: float,
                               basis: FockBasis, xi_plus: float,
                               xi_minus: float, eps: float | None = None,
                               t0: np.ndarray | None = None,
                               slack: float = 1e-9) \
        -> tuple[bool, float, float]:
    """Exponential bound on the scaled operator norm of the solution."""
    grid = basis.grid
    n = basis.n
    if t0 is None:
        t0 = np.eye(n)
    gauge_sup = max((opnorm(f.f00[x]) for x in range(grid.m)), default=1.0)
    if xi_plus / xi_minus <= max(gauge_sup, gauge_sup ** 2):
        raise ValueError("scale gap must exceed the gauge supremum")
    if eps is None:
        eps = epsilon_bound(xi_plus, xi_minus, gauge_sup)
    if not 0 < eps <= epsilon_bound(xi_plus, xi_minus, gauge_sup):
        raise ValueError("epsilon outside the admissible range")
    expo = 0.0
    for x in grid.points_before(t):
        expo += grid.weight(x) * (
            opnorm(f.fpm[x])
            + (opnorm(f.f0m[x]) ** 2 + opnorm(f.fp0[x]) ** 2) / (2 * eps))
    rhs = opnorm(t0) * float(np.exp(expo))
    u = solve_evolution(t, f, t0, basis)
    lhs = operator_scale_norm(u, basis, xi_plus, xi_minus)
    return lhs <= rhs * (1 + slack), lhs, rhs
