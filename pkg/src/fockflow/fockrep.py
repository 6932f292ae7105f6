"""Representation of kernels as dense operators on the truncated Fock space.

All operators here are plain complex matrices over the chain basis; an
operator "with legs" carries extra trailing noise factors on its rows
and/or columns (index layout: global basis coordinate first, legs last).
Adjoints are always taken with respect to the weighted inner product of the
lattice, which is what makes the representation a *-homomorphism identity
rather than an approximation.

Integration chains of every quantum stochastic sum are kept pairwise
disjoint and disjoint from the output and input chains; this convention
localizes every discretization error in operator composition and keeps the
structural identities (adjoint, increment reconstruction, intertwining,
Ito integral sums) exact on the finite grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .blocks import Pts, flat_dim, merge_sorted, opnorm, permute_factors, \
    identity_extend
from .kernels import Kernel, KernelTable, table, point_table
from .lattice import FockBasis, FockVector, Grid, chain_weight

__all__ = [
    "iota", "weighted_adjoint", "operator_scale_norm", "IntegrandTable",
    "single_integral", "multiple_integral", "qs_derivatives",
    "reconstruction_defect", "n_transform", "embed_system_kernel",
    "check_intertwining", "integrability_norms", "multi_norm",
    "is_adapted", "operator_is_adapted", "StepProcess", "ito_sum_compare",
    "NotAdaptedError", "iota_adjoint_defect", "multi_integral_bound_pair",
    "exp_bound_pair", "epsilon_bound",
]


class NotAdaptedError(ValueError):
    """A process violates the adaptedness hypothesis of an identity."""


# ---------------------------------------------------------------------------
# the representation


def iota(k: Kernel, basis: FockBasis, row_legs: Pts = (),
         col_legs: Pts = ()) -> np.ndarray:
    """Dense matrix of the kernel representation.

    Each table contributes one (output chain, input chain) block: the output
    chain is gauge+creation, the input chain annihilation+gauge, and the
    annihilation/time chains are integrated with their quadrature weights.
    Extra legs spectate.
    """
    grid = basis.grid
    n, d = basis.n, basis.d
    lr, lc = d ** len(row_legs), d ** len(col_legs)
    out = np.zeros((basis.dim * lr, basis.dim * lc), dtype=complex)
    for t, b in k.blocks.items():
        kappa = merge_sorted(t.gauge, t.cre)
        theta = merge_sorted(t.ann, t.gauge)
        wgt = chain_weight(grid, t.ann) * chain_weight(grid, t.time)
        blk = permute_factors(b, d,
                              n, t.row_pts() + row_legs, kappa + row_legs,
                              n, t.col_pts() + col_legs, theta + col_legs)
        rs = basis.block_slice(kappa)
        cs = basis.block_slice(theta)
        out[rs.start * lr:rs.stop * lr, cs.start * lc:cs.stop * lc] += \
            wgt * blk
    return out


def weighted_adjoint(u: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Adjoint with respect to the weighted inner product."""
    w2 = basis.coordinate_weights(1.0)
    return (u.conj().T * w2[None, :]) / w2[:, None]


def iota_adjoint_defect(k: Kernel, basis: FockBasis) -> float:
    """Distance between the adjoint of iota(k) and iota of the adjoint."""
    lhs = weighted_adjoint(iota(k, basis), basis)
    rhs = iota(k.adjoint(), basis)
    return opnorm(lhs - rhs)


def operator_scale_norm(u: np.ndarray, basis: FockBasis,
                        xi_plus: float = 1.0, xi_minus: float = 1.0,
                        row_legs: int = 0, col_legs: int = 0) -> float:
    """Operator norm between scaled Fock spaces (legs unscaled)."""
    if xi_plus <= 0 or xi_minus <= 0:
        raise ValueError("scale parameters must be positive")
    d = basis.d
    sm = np.repeat(basis.scale_diag(xi_minus), d ** row_legs)
    sp = np.repeat(basis.scale_diag(xi_plus), d ** col_legs)
    return opnorm(sm[:, None] * u / sp[None, :])


# ---------------------------------------------------------------------------
# derivative / insertion plumbing


def point_derivative_matrix(basis: FockBasis, x: int) -> np.ndarray:
    """Matrix of the chain-shift derivative at x: G -> G (x) E(x)."""
    n, d = basis.n, basis.d
    out = np.zeros((basis.dim * d, basis.dim), dtype=complex)
    for chain in basis.chains:
        if x in chain:
            continue
        union = merge_sorted(chain, (x,))
        k = len(union)
        eye = np.eye(n * d ** k, dtype=complex)
        blk = permute_factors(eye, d, n, union, chain + (x,), n, union, union)
        rs = basis.block_slice(chain)
        cs = basis.block_slice(union)
        out[rs.start * d:rs.stop * d, cs] = blk
    return out


def point_insertion_matrix(basis: FockBasis, x: int) -> np.ndarray:
    """Matrix placing a trailing E(x) leg back into its chain position."""
    n, d = basis.n, basis.d
    out = np.zeros((basis.dim, basis.dim * d), dtype=complex)
    for chain in basis.chains:
        if x in chain:
            continue
        union = merge_sorted(chain, (x,))
        k = len(union)
        eye = np.eye(n * d ** k, dtype=complex)
        blk = permute_factors(eye, d, n, union, union, n, union, chain + (x,))
        rs = basis.block_slice(union)
        cs = basis.block_slice(chain)
        out[rs, cs.start * d:cs.stop * d] = blk
    return out


def chain_mask(basis: FockBasis, x: int) -> np.ndarray:
    """Coordinate mask selecting chains that avoid the point x."""
    mask = np.zeros(basis.dim)
    for chain in basis.chains:
        if x not in chain:
            mask[basis.block_slice(chain)] = 1.0
    return mask


# ---------------------------------------------------------------------------
# single quantum stochastic integrals


@dataclass
class IntegrandTable:
    """Pointwise integrand: four operator-valued functions over grid points.

    Shapes (N = basis dimension, d = noise dimension): gauge (N d, N d),
    creation (N d, N), annihilation (N, N d), time (N, N); legs trail.
    """

    d00: dict[int, np.ndarray] = field(default_factory=dict)
    dp0: dict[int, np.ndarray] = field(default_factory=dict)
    d0m: dict[int, np.ndarray] = field(default_factory=dict)
    dpm: dict[int, np.ndarray] = field(default_factory=dict)

    def points(self) -> set[int]:
        return set(self.d00) | set(self.dp0) | set(self.d0m) | set(self.dpm)


CHANNELS = ("00", "p0", "0m", "pm")


def single_integral(t: float, dtab: IntegrandTable, basis: FockBasis,
                    channels: tuple[str, ...] = CHANNELS) -> np.ndarray:
    """Sum of the four elementary integrals up to time t.

    Gauge and creation channels insert the point into the output chain;
    annihilation and time channels integrate it with its weight, restricted
    to output chains avoiding the point.
    """
    grid = basis.grid
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    live = set(grid.points_before(t))
    for x in sorted(live):
        ins = dd = None
        if ("00" in channels and x in dtab.d00) or \
           ("p0" in channels and x in dtab.dp0):
            ins = point_insertion_matrix(basis, x)
        if ("00" in channels and x in dtab.d00) or \
           ("0m" in channels and x in dtab.d0m):
            dd = point_derivative_matrix(basis, x)
        mask = None
        if ("0m" in channels and x in dtab.d0m) or \
           ("pm" in channels and x in dtab.dpm):
            mask = chain_mask(basis, x)
        if "00" in channels and x in dtab.d00:
            out += ins @ dtab.d00[x] @ dd
        if "p0" in channels and x in dtab.dp0:
            out += ins @ dtab.dp0[x]
        if "0m" in channels and x in dtab.d0m:
            out += grid.weight(x) * (mask[:, None] * (dtab.d0m[x] @ dd))
        if "pm" in channels and x in dtab.dpm:
            out += grid.weight(x) * (mask[:, None] * dtab.dpm[x]
                                     * mask[None, :])
    return out


# ---------------------------------------------------------------------------
# multiple integrals


def _free_points(grid: Grid, used: set[int]) -> Pts:
    return tuple(p for p in range(grid.m) if p not in used)


def _subsets(pts: Pts):
    for r in range(len(pts) + 1):
        yield from itertools.combinations(pts, r)


def multiple_integral(t: float, b: dict[KernelTable, np.ndarray],
                      basis: FockBasis, row_legs: Pts = (),
                      col_legs: Pts = ()) -> np.ndarray:
    """Table-indexed integral up to time t of operator-valued blocks.

    ``b`` maps tables (all points before t) to operators on the Fock space
    carrying the table's noise legs: rows (basis, gauge, cre, row_legs),
    columns (basis, ann, gauge, col_legs).  Integration chains, spectator
    chains and leg points are kept pairwise disjoint.
    """
    grid = basis.grid
    n, d = basis.n, basis.d
    lr, lc = d ** len(row_legs), d ** len(col_legs)
    out = np.zeros((basis.dim * lr, basis.dim * lc), dtype=complex)
    live = set(grid.points_before(t))
    for tab, blk in b.items():
        pts = set(tab.points())
        if not pts <= live:
            continue
        wgt = chain_weight(grid, tab.ann) * chain_weight(grid, tab.time)
        dr = d ** (len(tab.row_pts()) + len(row_legs))
        dc = d ** (len(tab.col_pts()) + len(col_legs))
        free = _free_points(grid, pts | set(row_legs) | set(col_legs))
        for rem_out in _subsets(free):
            kappa = merge_sorted(tuple(sorted(tab.gauge + tab.cre)), rem_out)
            rs = basis.block_slice(merge_sorted(rem_out, ()))  # rem chain
            rows = slice(rs.start * dr, rs.stop * dr)
            go = basis.block_slice(kappa)
            for rem_in in _subsets(free):
                theta = merge_sorted(tuple(sorted(tab.ann + tab.gauge)),
                                     rem_in)
                cs = basis.block_slice(rem_in)
                cols = slice(cs.start * dc, cs.stop * dc)
                sub = blk[rows, cols]
                sub = permute_factors(
                    sub, d,
                    n, rem_out + tab.row_pts() + row_legs,
                    kappa + row_legs,
                    n, rem_in + tab.col_pts() + col_legs,
                    theta + col_legs)
                gi = basis.block_slice(theta)
                out[go.start * lr:go.stop * lr,
                    gi.start * lc:gi.stop * lc] += wgt * sub
    return out


def table_value_or_zero(b: dict[KernelTable, np.ndarray], tab: KernelTable,
                        basis: FockBasis, row_legs: Pts = (),
                        col_legs: Pts = ()) -> np.ndarray:
    d = basis.d
    got = b.get(tab)
    if got is not None:
        return got
    dr = basis.dim * d ** (len(tab.row_pts()) + len(row_legs))
    dc = basis.dim * d ** (len(tab.col_pts()) + len(col_legs))
    return np.zeros((dr, dc), dtype=complex)


def qs_derivatives(b: dict[KernelTable, np.ndarray], x: int,
                   basis: FockBasis) -> IntegrandTable:
    """The four derivative operators of a multiple integral at point x.

    Each is the multiple integral, up to t(x), of the integrand with x
    pinned into one slot; the pinned point's noise factor is pulled out to
    a trailing leg.
    """
    grid = basis.grid
    n, d = basis.n, basis.d
    tx = grid.times[x]
    legs = {"gauge": ((x,), (x,)), "cre": ((x,), ()),
            "ann": ((), (x,)), "time": ((), ())}
    shifted: dict[str, dict[KernelTable, np.ndarray]] = \
        {s: {} for s in legs}
    slot_index = {"ann": 0, "time": 1, "gauge": 2, "cre": 3}
    for tab, blk in b.items():
        pts = tab.points()
        if x not in pts:
            continue
        if any(grid.times[p] >= tx for p in pts if p != x):
            continue
        for slot, idx in slot_index.items():
            if x in tab[idx]:
                rest = list(tab)
                rest[idx] = tuple(p for p in rest[idx] if p != x)
                sub = KernelTable(*rest)
                rl, cl = legs[slot]
                moved = permute_factors(
                    blk, d,
                    basis.dim, tab.row_pts(), sub.row_pts() + rl,
                    basis.dim, tab.col_pts(), sub.col_pts() + cl)
                shifted[slot][sub] = moved
                break
    out = IntegrandTable()
    if shifted["gauge"]:
        out.d00[x] = multiple_integral(tx, shifted["gauge"], basis,
                                       (x,), (x,))
    if shifted["cre"]:
        out.dp0[x] = multiple_integral(tx, shifted["cre"], basis, (x,), ())
    if shifted["ann"]:
        out.d0m[x] = multiple_integral(tx, shifted["ann"], basis, (), (x,))
    if shifted["time"]:
        out.dpm[x] = multiple_integral(tx, shifted["time"], basis, (), ())
    return out


def qs_derivative_table(b: dict[KernelTable, np.ndarray], t: float,
                        basis: FockBasis) -> IntegrandTable:
    out = IntegrandTable()
    for x in basis.grid.points_before(t):
        part = qs_derivatives(b, x, basis)
        out.d00.update(part.d00)
        out.dp0.update(part.dp0)
        out.d0m.update(part.d0m)
        out.dpm.update(part.dpm)
    return out


def reconstruction_defect(t: float, b: dict[KernelTable, np.ndarray],
                          basis: FockBasis) -> float:
    """Defect of the increment identity: integral = value at the empty
    table plus the single integral of the derivative table."""
    lhs = multiple_integral(t, b, basis)
    dtab = qs_derivative_table(b, t, basis)
    rhs = table_value_or_zero(b, table(), basis) + \
        single_integral(t, dtab, basis)
    return opnorm(lhs - rhs)


# ---------------------------------------------------------------------------
# the sub-table transform and intertwining


def n_transform(t: float, l: Kernel) -> Kernel:
    """Sum the integrand over sub-tables before t, identity-extending the
    gauge remainder; tables keeping an off-diagonal remainder vanish."""
    grid = l.grid
    n, d = l.n, l.d
    live = set(grid.points_before(t))
    out = Kernel(grid)
    for lt, lb in l.blocks.items():
        if not set(lt.points()) <= live:
            continue
        free = _free_points(grid, set(lt.points()))
        for s in _subsets(free):
            gauge = merge_sorted(lt.gauge, s)
            ot = KernelTable(lt.ann, lt.time, gauge, lt.cre)
            ext = identity_extend(lb, d, n, lt.row_pts(), n, lt.col_pts(),
                                  s, ot.row_pts(), ot.col_pts())
            out.add_block(ot, ext)
    return out.prune()


def embed_system_kernel(l: Kernel, basis: FockBasis) \
        -> dict[KernelTable, np.ndarray]:
    """Lift a system-level table function to Fock-level integrand blocks,
    acting as the identity on every spectator chain."""
    n, d = basis.n, basis.d
    out: dict[KernelTable, np.ndarray] = {}
    for lt, lb in l.blocks.items():
        pts = set(lt.points())
        dr = d ** len(lt.row_pts())
        dc = d ** len(lt.col_pts())
        big = np.zeros((basis.dim * dr, basis.dim * dc), dtype=complex)
        for rho in basis.chains:
            if set(rho) & pts:
                continue
            ext = identity_extend(lb, d, n, lt.row_pts(), n, lt.col_pts(),
                                  rho, rho + lt.row_pts(),
                                  rho + lt.col_pts())
            rs = basis.block_slice(rho)
            big[rs.start * dr:rs.stop * dr, rs.start * dc:rs.stop * dc] = ext
        out[lt] = big
    return out


def check_intertwining(t: float, l: Kernel, basis: FockBasis) -> float:
    """Distance between the integral of the lifted integrand and the
    representation of its sub-table transform."""
    lhs = multiple_integral(t, embed_system_kernel(l, basis), basis)
    rhs = iota(n_transform(t, l), basis)
    return opnorm(lhs - rhs)


# ---------------------------------------------------------------------------
# integrability norms


def _legged_scale_norm(mat: np.ndarray, basis: FockBasis, xi_plus: float,
                       xi_minus: float, row_legs: int, col_legs: int) \
        -> float:
    d = basis.d
    sm = np.repeat(basis.scale_diag(xi_minus), d ** row_legs)
    sp = np.repeat(basis.scale_diag(xi_plus), d ** col_legs)
    return opnorm(sm[:, None] * mat / sp[None, :])


def integrability_norms(dtab: IntegrandTable, basis: FockBasis, t: float,
                        xi_plus: float, xi_minus: float) \
        -> tuple[float, float, float, float]:
    """Sup, L2, L2, L1 norms of the four integrand channels before t."""
    grid = basis.grid
    live = grid.points_before(t)
    sup00 = 0.0
    sq_p0 = 0.0
    sq_0m = 0.0
    l1_pm = 0.0
    for x in live:
        w = grid.weight(x)
        if x in dtab.d00:
            sup00 = max(sup00, _legged_scale_norm(dtab.d00[x], basis,
                                                  xi_plus, xi_minus, 1, 1))
        if x in dtab.dp0:
            sq_p0 += w * _legged_scale_norm(dtab.dp0[x], basis, xi_plus,
                                            xi_minus, 1, 0) ** 2
        if x in dtab.d0m:
            sq_0m += w * _legged_scale_norm(dtab.d0m[x], basis, xi_plus,
                                            xi_minus, 0, 1) ** 2
        if x in dtab.dpm:
            l1_pm += w * _legged_scale_norm(dtab.dpm[x], basis, xi_plus,
                                            xi_minus, 0, 0)
    return sup00, float(np.sqrt(sq_p0)), float(np.sqrt(sq_0m)), l1_pm


def multi_norm(b: dict[KernelTable, np.ndarray], basis: FockBasis, t: float,
               eta_upper: tuple[float, float, float],
               eta_lower: tuple[float, float, float]) -> float:
    """Mixed L1/L2/sup norm of a table-indexed integrand.

    ``eta_upper`` and ``eta_lower`` are the (annihilation, gauge, creation)
    resp. (time-side) weight triples; the gauge direction enters through a
    supremum, the creation/annihilation directions through weighted squares
    and the time chain through an outer weighted sum.
    """
    em, e0, ep = eta_upper
    fm, f0, fp = eta_lower
    if min(em, e0, ep, fm, f0, fp) <= 0:
        raise ValueError("all six weights must be positive")
    grid = basis.grid
    live = set(grid.points_before(t))
    groups: dict[Pts, dict[tuple[Pts, Pts], float]] = {}
    for tab, blk in b.items():
        if not set(tab.points()) <= live:
            continue
        nb = _legged_scale_norm(blk, basis, ep, fm, len(tab.row_pts()),
                                len(tab.col_pts()))
        if nb == 0.0:
            continue
        val = (f0 / e0) ** len(tab.gauge) * nb ** 2
        key = (tab.ann, tab.cre)
        sub = groups.setdefault(tab.time, {})
        sub[key] = max(sub.get(key, 0.0), val)
    total = 0.0
    for tau, sub in groups.items():
        inner = 0.0
        for (ann, cre), val in sub.items():
            inner += (chain_weight(grid, ann) * chain_weight(grid, cre)
                      * fp ** len(cre) / em ** len(ann) * val)
        total += chain_weight(grid, tau) * np.sqrt(inner)
    return float(total)


def multi_integral_bound_pair(b: dict[KernelTable, np.ndarray],
                              basis: FockBasis, t: float,
                              eta_upper: tuple[float, float, float],
                              eta_lower: tuple[float, float, float],
                              vec: FockVector) \
        -> tuple[float, float]:
    """Evaluate both sides of the integral continuity estimate for one
    vector; the scales are the tight ones derived from the weights."""
    from .lattice import scale_norm
    xi_plus = sum(eta_upper)
    xi_minus = 1.0 / sum(1.0 / ev for ev in eta_lower)
    u = multiple_integral(t, b, basis)
    lhs = scale_norm(FockVector(basis, u @ vec.data), xi_minus)
    rhs = multi_norm(b, basis, t, eta_upper, eta_lower) * \
        scale_norm(vec, xi_plus)
    return lhs, rhs


def epsilon_bound(xi_plus: float, xi_minus: float, gauge_sup: float) -> float:
    """Largest admissible epsilon for the exponential representation bound."""
    if xi_plus / xi_minus <= gauge_sup ** 2:
        raise ValueError("scale gap too small for the gauge supremum")
    disc = np.sqrt((xi_plus - 1.0 / xi_minus) ** 2 + 4.0 * gauge_sup ** 2)
    return float((xi_plus + 1.0 / xi_minus - disc) / 2.0)


def exp_bound_pair(k: Kernel, basis: FockBasis, zeta, xi_plus: float,
                   xi_minus: float, eps: float | None = None) \
        -> tuple[float, float]:
    """Representation norm of a kernel against its exponential bound.

    The bound multiplies the relative bound of the kernel by the
    exponential of the weighted sums of the off-diagonal weight data.
    """
    from .kernels import relative_bound
    grid = basis.grid
    gauge_sup = float(np.max(zeta.z00)) if grid.m else 1.0
    if eps is None:
        eps = epsilon_bound(xi_plus, xi_minus, gauge_sup)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    w = np.asarray(grid.weights)
    expo = float(np.sum(w * (zeta.zpm + (zeta.z0m ** 2 + zeta.zp0 ** 2)
                             / (2.0 * eps))))
    lhs = operator_scale_norm(iota(k, basis), basis, xi_plus, xi_minus)
    rhs = float(np.exp(expo)) * relative_bound(k, zeta)
    return lhs, rhs


# ---------------------------------------------------------------------------
# adaptedness


def is_adapted(k: Kernel, t: float, tol: float = 1e-12) -> bool:
    """Whether the kernel factors as past part tensor identity future."""
    from .kernels import max_defect
    grid = k.grid
    live = set(grid.points_before(t))
    expected = Kernel(grid)
    n, d = k.n, k.d
    future = tuple(p for p in range(grid.m) if p not in live)
    for kt, kb in k.blocks.items():
        if not set(kt.points()) <= live:
            continue
        for s in _subsets(tuple(p for p in future)):
            gauge = merge_sorted(kt.gauge, s)
            ot = KernelTable(kt.ann, kt.time, gauge, kt.cre)
            ext = identity_extend(kb, d, n, kt.row_pts(), n, kt.col_pts(),
                                  s, ot.row_pts(), ot.col_pts())
            expected.add_block(ot, ext)
    return max_defect(k, expected) <= tol


def operator_is_adapted(u: np.ndarray, basis: FockBasis, t: float,
                        tol: float = 1e-12) -> bool:
    """Whether a Fock operator acts trivially on the future factors."""
    grid = basis.grid
    n, d = basis.n, basis.d
    live = set(grid.points_before(t))
    u = np.asarray(u, dtype=complex)
    expected = np.zeros(u.shape, dtype=complex)
    for ko in basis.chains:
        kop = tuple(p for p in ko if p in live)
        kof = tuple(p for p in ko if p not in live)
        for ki in basis.chains:
            kip = tuple(p for p in ki if p in live)
            kif = tuple(p for p in ki if p not in live)
            if kof != kif:
                continue
            past = u[basis.block_slice(kop), basis.block_slice(kip)]
            ext = identity_extend(past, d, n, kop, n, kip, kof, ko, ki)
            expected[basis.block_slice(ko), basis.block_slice(ki)] = ext
    return opnorm(u - expected) <= tol


# ---------------------------------------------------------------------------
# Ito integral sums for step processes


@dataclass
class StepProcess:
    """Piecewise constant adapted operator process on [0, t)."""

    boundaries: tuple[float, ...]   # t_0 = 0 < t_1 < ... < t_K
    ops: list[np.ndarray]           # ops[i] on [t_i, t_{i+1})

    def __post_init__(self):
        if len(self.boundaries) != len(self.ops) + 1:
            raise ValueError("need one more boundary than pieces")
        if any(b2 <= b1 for b1, b2 in
               zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("boundaries must increase")

    def at(self, s: float) -> np.ndarray:
        for i in range(len(self.ops)):
            if self.boundaries[i] <= s < self.boundaries[i + 1]:
                return self.ops[i]
        raise ValueError(f"time {s} outside the process support")


def ito_sum_compare(t: float, btab: IntegrandTable, proc: StepProcess,
                    basis: FockBasis) -> float:
    """Defect between the integral of the composed integrand and the
    Ito sum of integral increments against the step process.

    Raises NotAdaptedError unless every piece is adapted at its left
    boundary.
    """
    grid = basis.grid
    d = basis.d
    for i, op in enumerate(proc.ops):
        if not operator_is_adapted(op, basis, proc.boundaries[i],
                                   tol=1e-10):
            raise NotAdaptedError(
                f"step process piece {i} is not adapted at "
                f"t={proc.boundaries[i]}")
    eye_d = np.eye(d)
    composed = IntegrandTable()
    for x in grid.points_before(t):
        tx = grid.times[x]
        if tx < proc.boundaries[0] or tx >= min(proc.boundaries[-1], t):
            continue
        u = proc.at(tx)
        ud = np.kron(u, eye_d)
        if x in btab.d00:
            composed.d00[x] = btab.d00[x] @ ud
        if x in btab.dp0:
            composed.dp0[x] = btab.dp0[x] @ u
        if x in btab.d0m:
            composed.d0m[x] = btab.d0m[x] @ ud
        if x in btab.dpm:
            composed.dpm[x] = btab.dpm[x] @ u
    t_end = min(t, proc.boundaries[-1])
    lhs = single_integral(t_end, composed, basis)
    rhs = np.zeros_like(lhs)
    for i, u in enumerate(proc.ops):
        lo = proc.boundaries[i]
        hi = min(proc.boundaries[i + 1], t_end)
        if hi <= lo:
            break
        inc = single_integral(hi, btab, basis) - \
            single_integral(lo, btab, basis)
        rhs += inc @ u
    return opnorm(lhs - rhs)
