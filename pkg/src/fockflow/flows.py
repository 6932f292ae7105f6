"""Quantum Langevin flows: structure maps and chronological compositions.

A structure map sends a system operator to a triangular block matrix,
pointwise over the grid.  The flow kernel nests the map components over a
table's points with the latest point innermost; its representation is the
flow, a family of maps on the system algebra that is unital and Hermitian
exactly and multiplicative up to a grid-size defect when the structure map
is a pointwise *-homomorphism (e.g. a pseudo-unitary sandwich).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import identity_extend, opnorm, permute_factors
from .evolution import GeneratorField, embed_point_operator, solve_evolution
from .fockrep import (IntegrandTable, epsilon_bound, iota,
                      operator_scale_norm, single_integral, weighted_adjoint)
from .ito import TriangularMatrix, pseudo_conjugate
from .kernels import Kernel, table
from .lattice import FockBasis, Grid

__all__ = [
    "StructureMap", "spatial_structure_map", "identity_init_map",
    "multiplicativity_defect", "flow_kernel", "flow",
    "transformed_process_equation_check", "flow_norm_bound_check",
    "map_norm_bound",
]

SLOT_NAMES = ("ann", "time", "gauge", "cre")


@dataclass
class StructureMap:
    """Per-point linear maps from system operators into triangular blocks.

    Component tensors act by contraction over the last two axes:
    gauge (n, d, n, d, n, n), creation (n, d, n, n, n),
    annihilation (n, n, d, n, n), time (n, n, n, n).  The gauge component
    contains the full sandwich value (identity part included).
    """

    grid: Grid
    t00: list[np.ndarray]
    tp0: list[np.ndarray]
    t0m: list[np.ndarray]
    tpm: list[np.ndarray]

    def apply(self, x: int, slot: str, blk: np.ndarray, nrow: int,
              ncol: int) -> np.ndarray:
        """Apply one component to a block with nrow/ncol trailing factors,
        returning the block with the new point factor leading."""
        n, d = self.grid.system_dim, self.grid.noise_dim
        t4 = blk.reshape(n, d ** nrow, n, d ** ncol)
        if slot == "gauge":
            out = np.einsum("AEBFij,iRjC->AERBFC", self.t00[x], t4)
            return out.reshape(n * d ** (nrow + 1), n * d ** (ncol + 1))
        if slot == "cre":
            out = np.einsum("AEBij,iRjC->AERBC", self.tp0[x], t4)
            return out.reshape(n * d ** (nrow + 1), n * d ** ncol)
        if slot == "ann":
            out = np.einsum("ABFij,iRjC->ARBFC", self.t0m[x], t4)
            return out.reshape(n * d ** nrow, n * d ** (ncol + 1))
        if slot == "time":
            out = np.einsum("ABij,iRjC->ARBC", self.tpm[x], t4)
            return out.reshape(n * d ** nrow, n * d ** ncol)
        raise ValueError(f"unknown slot {slot!r}")

    def component(self, x: int, slot: str, a: np.ndarray) -> np.ndarray:
        """Value of one component on a plain system operator."""
        n, d = self.grid.system_dim, self.grid.noise_dim
        out = self.apply(x, slot, np.asarray(a, dtype=complex), 0, 0)
        return out

    def lambda_component(self, x: int, slot: str, a: np.ndarray) \
            -> np.ndarray:
        """Deviation from the trivial embedding (gauge only)."""
        val = self.component(x, slot, a)
        if slot == "gauge":
            d = self.grid.noise_dim
            val = val - np.kron(np.asarray(a, dtype=complex), np.eye(d))
        return val

    def triangular(self, x: int, a: np.ndarray) -> TriangularMatrix:
        """Full triangular value on a system operator (corners a)."""
        n, d = self.grid.system_dim, self.grid.noise_dim
        a = np.asarray(a, dtype=complex)
        out = TriangularMatrix.identity(n, d)
        out.top = a
        out.bot = a.copy()
        out.gauge = self.component(x, "gauge", a)
        out.cre = self.component(x, "cre", a)
        out.ann = self.component(x, "ann", a)
        out.time = self.component(x, "time", a)
        return out


def spatial_structure_map(f: GeneratorField) -> StructureMap:
    """Sandwich map: conjugate the trivially embedded operator by the
    per-point scattering factors on both sides (pseudo-star on the left)."""
    grid = f.grid
    n, d = grid.system_dim, grid.noise_dim
    eye = np.eye(n, dtype=complex)
    t00, tp0, t0m, tpm = [], [], [], []
    for x in range(grid.m):
        f4 = f.f00[x].reshape(n, d, n, d)
        fp = f.fp0[x].reshape(n, d, n)
        fm = f.f0m[x].reshape(n, n, d)
        ft = f.fpm[x]
        t00.append(np.einsum("igAE,jgBF->AEBFij", f4.conj(), f4))
        tp0.append(np.einsum("igAE,jgB->AEBij", f4.conj(), fp)
                   + np.einsum("iAE,jB->AEBij", fm.conj(), eye))
        t0m.append(np.einsum("iA,jBF->ABFij", eye, fm)
                   + np.einsum("igA,jgBF->ABFij", fp.conj(), f4))
        tpm.append(np.einsum("iA,jB->ABij", eye, ft)
                   + np.einsum("igA,jgB->ABij", fp.conj(), fp)
                   + np.einsum("iA,jB->ABij", ft.conj(), eye))
    return StructureMap(grid, t00, tp0, t0m, tpm)


def identity_init_map(n: int) -> np.ndarray:
    """Initial map tensor acting as the identity on system operators."""
    out = np.zeros((n, n, n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            out[i, j, i, j] = 1.0
    return out


def apply_init_map(tau0: np.ndarray, blk: np.ndarray, n: int, d: int,
                   nrow: int, ncol: int) -> np.ndarray:
    t4 = blk.reshape(n, d ** nrow, n, d ** ncol)
    out = np.einsum("ABij,iRjC->ARBC", tau0, t4)
    return out.reshape(blk.shape)


def multiplicativity_defect(phi: StructureMap, x: int,
                            gens: list[np.ndarray]) -> float:
    """Largest defect of phi(a* b) = phi(a)* phi(b) over generator pairs."""
    worst = 0.0
    for a in gens:
        for b in gens:
            lhs = phi.triangular(x, np.asarray(a).conj().T @ b)
            rhs = pseudo_conjugate(phi.triangular(x, a)) @ \
                phi.triangular(x, b)
            worst = max(worst, (lhs - rhs).norm())
    return worst


# ---------------------------------------------------------------------------
# flow kernels and flows


def flow_kernel(t: float, phi: StructureMap, tau0: np.ndarray,
                a: np.ndarray) -> Kernel:
    """Kernel of the flow applied to one system operator.

    Each table's value nests the map components over its past points with
    the latest point innermost, applies the initial map, and extends by
    identity factors over future gauge points; tables with future
    off-diagonal points vanish.  Suffix values are shared across tables by
    assigning points latest-first.
    """
    grid = phi.grid
    n, d = grid.system_dim, grid.noise_dim
    out = Kernel(grid)
    live = set(grid.points_before(t))
    a = np.asarray(a, dtype=complex)
    slot_updates = {"gauge": (True, True), "cre": (True, False),
                    "ann": (False, True), "time": (False, False)}

    def descend(x: int, blk, rows: tuple, cols: tuple, slots: dict,
                future_gauge: tuple):
        if x < 0:
            val = apply_init_map(tau0, blk, n, d, len(rows), len(cols))
            tab = table(ann=slots["ann"], time=slots["time"],
                        gauge=slots["gauge"] + future_gauge,
                        cre=slots["cre"])
            val = identity_extend(val, d, n, rows, n, cols, future_gauge,
                                  tab.row_pts(), tab.col_pts())
            if np.max(np.abs(val)) > 0:
                out.set_block(tab, val)
            return
        descend(x - 1, blk, rows, cols, slots, future_gauge)
        if x not in live:
            descend(x - 1, blk, rows, cols, slots, (x,) + future_gauge)
            return
        for slot in SLOT_NAMES:
            newblk = phi.apply(x, slot, blk, len(rows), len(cols))
            add_row, add_col = slot_updates[slot]
            descend(x - 1, newblk,
                    (x,) + rows if add_row else rows,
                    (x,) + cols if add_col else cols,
                    {**slots, slot: (x,) + slots[slot]}, future_gauge)

    descend(grid.m - 1, a, (), (),
            {s: () for s in SLOT_NAMES}, ())
    return out


def flow(t: float, phi: StructureMap, tau0: np.ndarray, a: np.ndarray,
         basis: FockBasis) -> np.ndarray:
    """Fock operator of the flow at one system operator."""
    return iota(flow_kernel(t, phi, tau0, a), basis)


# ---------------------------------------------------------------------------
# transformed processes


def transformed_process_equation_check(
        t: float, f: GeneratorField, lb: Kernel, basis: FockBasis,
        xi_plus: float = 2.0, xi_minus: float = 0.5) -> float:
    """Defect of the transformed-process equation at operator level.

    The process kernel is the sub-table transform of ``lb``; the evolution
    comes from ``f``.  The increment of the conjugated process is compared
    with the integral whose per-point integrand conjugates process plus
    derivative by the scattering factor inside the evolution sandwich.
    """
    from .fockrep import n_transform
    if basis.d != 1:
        raise NotImplementedError("requires noise_dim == 1")
    grid = basis.grid
    n, dim = basis.n, basis.dim

    def wadj(mat, rl=0, cl=0):
        return weighted_adjoint(mat, basis)

    from .evolution import chronological_kernel
    from .ito import kernel_point_triangular, next_cut, process_triangular
    dtab = IntegrandTable()
    for x in grid.points_before(t):
        s = grid.times[x]
        bb, gg_b = process_triangular(lb, s, next_cut(grid, x), basis)
        dd = gg_b - bb
        uk = kernel_point_triangular(chronological_kernel(s, f, np.eye(n)),
                                     x, basis)
        ss = _scatter_triangular(f, x, basis)
        inner = pseudo_conjugate(ss, wadj) @ (bb + dd) @ ss - bb
        integ = pseudo_conjugate(uk, wadj) @ inner @ uk
        dtab.d00[x] = integ.gauge
        dtab.dp0[x] = integ.cre
        dtab.d0m[x] = integ.ann
        dtab.dpm[x] = integ.time
    rhs = single_integral(t, dtab, basis)
    u_t = solve_evolution(t, f, np.eye(n), basis)
    b_t = iota(n_transform(t, lb), basis)
    b_0 = iota(n_transform(0.0, lb), basis)
    lhs = weighted_adjoint(u_t, basis) @ b_t @ u_t - b_0
    return operator_scale_norm(lhs - rhs, basis, xi_plus, xi_minus)


def _scatter_triangular(f: GeneratorField, x: int,
                        basis: FockBasis) -> TriangularMatrix:
    dim = basis.dim
    tri = TriangularMatrix.identity(dim, 1)
    tri.gauge = embed_point_operator(f.f00[x], basis, x, "00")
    tri.cre = embed_point_operator(f.fp0[x], basis, x, "p0")
    tri.ann = embed_point_operator(f.f0m[x], basis, x, "0m")
    tri.time = embed_point_operator(f.fpm[x], basis, x, "pm")
    return tri


# ---------------------------------------------------------------------------
# norm bound


def map_norm_bound(phi: StructureMap, x: int, slot: str) -> float:
    """Upper estimate of the map norm sup ||component(a)|| / ||a||.

    Uses the matricized largest singular value inflated by sqrt(n); valid
    as an upper bound on the spectral-to-spectral map norm.
    """
    n = phi.grid.system_dim
    tensor = {"gauge": phi.t00, "cre": phi.tp0, "ann": phi.t0m,
              "time": phi.tpm}[slot][x]
    flat = tensor.reshape(-1, n * n)
    return float(np.sqrt(n) * np.linalg.norm(flat, 2))


def _lambda_norm_bound(phi: StructureMap, x: int, slot: str) -> float:
    n, d = phi.grid.system_dim, phi.grid.noise_dim
    tensor = {"gauge": phi.t00, "cre": phi.tp0, "ann": phi.t0m,
              "time": phi.tpm}[slot][x]
    if slot == "gauge":
        tensor = tensor.copy()
        # subtract the trivial embedding a -> a (x) identity
        for i in range(n):
            for j in range(n):
                for e in range(d):
                    tensor[i, e, j, e, i, j] -= 1.0
    flat = tensor.reshape(-1, n * n)
    return float(np.sqrt(n) * np.linalg.norm(flat, 2))


def flow_norm_bound_check(phi: StructureMap, t: float, basis: FockBasis,
                          xi_plus: float, xi_minus: float,
                          a: np.ndarray, tau0: np.ndarray | None = None,
                          eps: float | None = None,
                          slack: float = 1e-9) -> tuple[bool, float, float]:
    """Exponential bound on the scaled norm of the flow at a contraction."""
    grid = basis.grid
    n = basis.n
    if opnorm(np.asarray(a)) > 1.0 + 1e-12:
        raise ValueError("the observable must be a contraction")
    if tau0 is None:
        tau0 = identity_init_map(n)
    gauge_sup = max((map_norm_bound(phi, x, "gauge")
                     for x in range(grid.m)), default=1.0)
    if xi_plus / xi_minus <= max(gauge_sup, gauge_sup ** 2):
        raise ValueError("scale gap must exceed the gauge map norm")
    if eps is None:
        eps = epsilon_bound(xi_plus, xi_minus, gauge_sup)
    expo = 0.0
    for x in grid.points_before(t):
        lam_t = _lambda_norm_bound(phi, x, "time")
        lam_c = _lambda_norm_bound(phi, x, "cre")
        lam_a = _lambda_norm_bound(phi, x, "ann")
        expo += grid.weights[x] * (lam_t + (lam_c ** 2 + lam_a ** 2)
                                   / (2 * eps))
    tau0_norm = float(np.linalg.norm(tau0.reshape(n * n, n * n), 2)) \
        * np.sqrt(n)
    rhs = max(tau0_norm, 1.0) * float(np.exp(expo))
    u = flow(t, phi, tau0, a, basis)
    lhs = operator_scale_norm(u, basis, xi_plus, xi_minus)
    return lhs <= rhs * (1 + slack), lhs, rhs
