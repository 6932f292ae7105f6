"""Block triangular matrices, pseudo-conjugation and the Ito correction.

A triangular matrix here is a 3x3 upper block matrix over the index order
(-, 0, +): two scalar corners of dimension q, a center block of dimension
q*d, and three strictly upper entries keyed by the integral channel they
feed (annihilation, time, creation).  Pseudo-conjugation flips the matrix
across the antidiagonal while conjugating blockwise; it is the involution
under which evolutions are unitary and generators Hermitian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .blocks import opnorm

__all__ = [
    "TriangularMatrix", "plain_adjoint", "pseudo_conjugate",
    "triangular_power", "ito_product_derivative", "triangular_exp",
    "functional_calculus", "NonCommutingError", "kernel_ito_identity_defect",
    "process_triangular", "ito_formula_check", "next_cut",
    "kernel_point_triangular",
]


class NonCommutingError(ValueError):
    """Inputs that must commute for a functional identity do not."""


def plain_adjoint(mat: np.ndarray, row_legs: int = 0,
                  col_legs: int = 0) -> np.ndarray:
    return mat.conj().T


@dataclass
class TriangularMatrix:
    """Upper triangular 3x3 block matrix with q-dim corners, qd center."""

    q: int
    d: int
    top: np.ndarray      # (-,-) corner, q x q
    ann: np.ndarray      # (-,0), q x qd
    time: np.ndarray     # (-,+), q x q
    gauge: np.ndarray    # (0,0), qd x qd
    cre: np.ndarray      # (0,+), qd x q
    bot: np.ndarray      # (+,+) corner, q x q

    def __post_init__(self):
        q, d = self.q, self.d
        shapes = {"top": (q, q), "ann": (q, q * d), "time": (q, q),
                  "gauge": (q * d, q * d), "cre": (q * d, q),
                  "bot": (q, q)}
        for name, sh in shapes.items():
            val = np.asarray(getattr(self, name), dtype=complex)
            if val.shape != sh:
                raise ValueError(f"block {name} has shape {val.shape}, "
                                 f"expected {sh}")
            setattr(self, name, val)

    @classmethod
    def identity(cls, q: int, d: int) -> "TriangularMatrix":
        return cls(q, d, np.eye(q), np.zeros((q, q * d)), np.zeros((q, q)),
                   np.eye(q * d), np.zeros((q * d, q)), np.eye(q))

    @classmethod
    def zero(cls, q: int, d: int) -> "TriangularMatrix":
        return cls(q, d, np.zeros((q, q)), np.zeros((q, q * d)),
                   np.zeros((q, q)), np.zeros((q * d, q * d)),
                   np.zeros((q * d, q)), np.zeros((q, q)))

    @classmethod
    def strict(cls, q: int, d: int, ann=None, time=None, gauge=None,
               cre=None) -> "TriangularMatrix":
        """Strictly upper matrix (zero corners); gauge may still be set."""
        out = cls.zero(q, d)
        if ann is not None:
            out.ann = np.asarray(ann, dtype=complex)
        if time is not None:
            out.time = np.asarray(time, dtype=complex)
        if gauge is not None:
            out.gauge = np.asarray(gauge, dtype=complex)
        if cre is not None:
            out.cre = np.asarray(cre, dtype=complex)
        return out

    def __matmul__(self, o: "TriangularMatrix") -> "TriangularMatrix":
        return TriangularMatrix(
            self.q, self.d,
            self.top @ o.top,
            self.top @ o.ann + self.ann @ o.gauge,
            self.top @ o.time + self.ann @ o.cre + self.time @ o.bot,
            self.gauge @ o.gauge,
            self.gauge @ o.cre + self.cre @ o.bot,
            self.bot @ o.bot)

    def __add__(self, o: "TriangularMatrix") -> "TriangularMatrix":
        return TriangularMatrix(self.q, self.d, *(a + b for a, b in
                                                  zip(self._blocks(),
                                                      o._blocks())))

    def __sub__(self, o: "TriangularMatrix") -> "TriangularMatrix":
        return self + (o * (-1.0))

    def __mul__(self, s: complex) -> "TriangularMatrix":
        return TriangularMatrix(self.q, self.d,
                                *(b * s for b in self._blocks()))

    __rmul__ = __mul__

    def _blocks(self) -> tuple[np.ndarray, ...]:
        return (self.top, self.ann, self.time, self.gauge, self.cre,
                self.bot)

    def as_matrix(self) -> np.ndarray:
        q, d = self.q, self.d
        c = q * d
        out = np.zeros((2 * q + c, 2 * q + c), dtype=complex)
        out[:q, :q] = self.top
        out[:q, q:q + c] = self.ann
        out[:q, q + c:] = self.time
        out[q:q + c, q:q + c] = self.gauge
        out[q:q + c, q + c:] = self.cre
        out[q + c:, q + c:] = self.bot
        return out

    @classmethod
    def from_matrix(cls, mat: np.ndarray, q: int, d: int) \
            -> "TriangularMatrix":
        c = q * d
        return cls(q, d, mat[:q, :q], mat[:q, q:q + c], mat[:q, q + c:],
                   mat[q:q + c, q:q + c], mat[q:q + c, q + c:],
                   mat[q + c:, q + c:])

    def norm(self) -> float:
        return opnorm(self.as_matrix())


Adjoint = Callable[[np.ndarray, int, int], np.ndarray]


def pseudo_conjugate(m: TriangularMatrix,
                     adj: Adjoint = plain_adjoint) -> TriangularMatrix:
    """Antidiagonal flip composed with blockwise adjoints.

    ``adj(mat, row_legs, col_legs)`` supplies the adjoint of one block; the
    default is the plain conjugate transpose, Fock-level callers pass the
    weighted adjoint.
    """
    return TriangularMatrix(
        m.q, m.d,
        adj(m.bot, 0, 0),
        adj(m.cre, 1, 0),
        adj(m.time, 0, 0),
        adj(m.gauge, 1, 1),
        adj(m.ann, 0, 1),
        adj(m.top, 0, 0))


def triangular_power(h: TriangularMatrix, k: int) -> TriangularMatrix:
    if k < 0:
        raise ValueError("nonnegative powers only")
    out = TriangularMatrix.identity(h.q, h.d)
    for _ in range(k):
        out = out @ h
    return out


def ito_product_derivative(u: TriangularMatrix, g: TriangularMatrix,
                           adj: Adjoint = plain_adjoint) \
        -> TriangularMatrix:
    """Derivative table of the product process: g*g - u*u (pseudo-star)."""
    return pseudo_conjugate(g, adj) @ g - pseudo_conjugate(u, adj) @ u


def triangular_exp(m: TriangularMatrix) -> TriangularMatrix:
    big = scipy.linalg.expm(m.as_matrix())
    return TriangularMatrix.from_matrix(big, m.q, m.d)


def _check_commuting(mats: Sequence[TriangularMatrix], tol: float) -> None:
    for i, a in enumerate(mats):
        for b in mats[i + 1:]:
            comm = a @ b - b @ a
            if comm.norm() > tol:
                raise NonCommutingError(
                    "exponential functional calculus requires a commuting "
                    f"family; commutator norm {comm.norm():.3e} > {tol:g}")


def functional_calculus(f, xs: Sequence[TriangularMatrix],
                        incs: Sequence[TriangularMatrix],
                        commute_tol: float = 1e-10) \
        -> tuple[TriangularMatrix, TriangularMatrix]:
    """Evaluate an ordered polynomial or the exponential on triangular
    arguments and on their increments.

    ``f`` is either the string ``"exp"`` (requires the combined family
    {x_i, x_i + a_i} to commute) or a list of monomials
    ``(coefficient, (i_1, ..., i_k))`` read left to right.
    Returns the pair (f evaluated at xs, f evaluated at xs + incs).
    """
    if len(xs) != len(incs):
        raise ValueError("need one increment per argument")
    zs = [x + a for x, a in zip(xs, incs)]
    if isinstance(f, str):
        if f != "exp":
            raise ValueError(f"unknown functional form {f!r}")
        _check_commuting(list(xs) + list(zs), commute_tol)
        sx = _tri_sum(xs)
        sz = _tri_sum(zs)
        return triangular_exp(sx), triangular_exp(sz)
    fx = TriangularMatrix.zero(xs[0].q, xs[0].d)
    fz = TriangularMatrix.zero(xs[0].q, xs[0].d)
    for coeff, word in f:
        tx = TriangularMatrix.identity(xs[0].q, xs[0].d)
        tz = TriangularMatrix.identity(xs[0].q, xs[0].d)
        for i in word:
            tx = tx @ xs[i]
            tz = tz @ zs[i]
        fx = fx + coeff * tx
        fz = fz + coeff * tz
    return fx, fz


def _tri_sum(mats: Sequence[TriangularMatrix]) -> TriangularMatrix:
    out = TriangularMatrix.zero(mats[0].q, mats[0].d)
    for m in mats:
        out = out + m
    return out


# ---------------------------------------------------------------------------
# the Ito formula at kernel and operator level


def kernel_ito_identity_defect(k, x: int) -> float:
    """Defect of the point-shift identity for the self-product of a kernel.

    Pinning a point of the product's argument into any slot factors the
    product into the corresponding entry of the triangular product of the
    kernel's point shifts.  One-dimensional noise only.
    """
    from .kernels import (kernel_product, kernel_without_point, max_defect,
                          point_shift_kernel)
    adj = k.adjoint()
    prod = kernel_product(adj, k)
    tk_c = kernel_without_point(k, x)      # corner entries avoid the point
    adj_c = kernel_without_point(adj, x)

    def sh(ker, slot):
        return point_shift_kernel(ker, x, slot)

    d00 = sh(k, "gauge")
    dp0 = sh(k, "cre")
    d0m = sh(k, "ann")
    dpm = sh(k, "time")
    s00 = sh(adj, "gauge")
    sp0 = sh(adj, "cre")   # pseudo-conjugated annihilation entry
    s0m = sh(adj, "ann")   # pseudo-conjugated creation entry
    spm = sh(adj, "time")
    kp = kernel_product
    worst = max_defect(sh(prod, "gauge"), kp(s00, d00))
    worst = max(worst, max_defect(sh(prod, "ann"),
                                  kp(adj_c, d0m) + kp(s0m, d00)))
    worst = max(worst, max_defect(sh(prod, "cre"),
                                  kp(s00, dp0) + kp(sp0, tk_c)))
    worst = max(worst, max_defect(
        sh(prod, "time"),
        kp(adj_c, dpm) + kp(s0m, dp0) + kp(spm, tk_c)))
    return worst


def next_cut(grid, x: int) -> float:
    """A time strictly between grid point x and its successor."""
    later = [s for s in grid.times if s > grid.times[x]]
    if later:
        return 0.5 * (grid.times[x] + min(later))
    return grid.times[x] + 0.5 * grid.weights[x]


def kernel_point_triangular(ker, x: int, basis) -> TriangularMatrix:
    """Triangular operator matrix of a kernel at one grid point: corners
    represent the kernel itself, entries its point shifts.  Noise_dim 1."""
    from .fockrep import iota
    from .kernels import point_shift_kernel
    if basis.d != 1:
        raise NotImplementedError("point triangulars need noise_dim == 1")
    tri = TriangularMatrix.identity(basis.dim, 1)
    tri.top = iota(ker, basis)
    tri.bot = tri.top.copy()
    tri.ann = iota(point_shift_kernel(ker, x, "ann"), basis)
    tri.time = iota(point_shift_kernel(ker, x, "time"), basis)
    tri.gauge = iota(point_shift_kernel(ker, x, "gauge"), basis)
    tri.cre = iota(point_shift_kernel(ker, x, "cre"), basis)
    return tri


def process_triangular(l, s: float, splus: float, basis) \
        -> tuple[TriangularMatrix, TriangularMatrix]:
    """Open and closed triangular operator matrices at the grid point
    between the cutoffs, for the process generated by a pointwise
    integrand.  One-dimensional noise only."""
    from .fockrep import n_transform
    grid = basis.grid
    x = next(p for p in range(grid.m) if s <= grid.times[p] < splus)
    uu = kernel_point_triangular(n_transform(s, l), x, basis)
    gg = kernel_point_triangular(n_transform(splus, l), x, basis)
    return uu, gg


def ito_formula_check(l, basis, t: float, xi_plus: float = 2.0,
                      xi_minus: float = 0.5) -> tuple[float, float]:
    """Kernel and operator defects of the product-differentiation rule.

    ``l`` is a pointwise integrand kernel (empty table allowed as initial
    value).  The kernel identity is exact; the operator defect measures
    how far composing representations deviates from representing the
    composed kernels, and shrinks with the grid step.
    """
    from .fockrep import (IntegrandTable, iota, n_transform,
                          operator_scale_norm, single_integral,
                          weighted_adjoint)
    grid = basis.grid
    kernel_defect = 0.0
    for x in grid.points_before(t):
        tk = n_transform(next_cut(grid, x), l)
        kernel_defect = max(kernel_defect,
                            kernel_ito_identity_defect(tk, x))

    def wadj(mat, rl=0, cl=0):
        return weighted_adjoint(mat, basis)

    dtab = IntegrandTable()
    for x in grid.points_before(t):
        uu, gg = process_triangular(l, grid.times[x], next_cut(grid, x),
                                    basis)
        corr = ito_product_derivative(uu, gg, adj=wadj)
        dtab.d00[x] = corr.gauge
        dtab.dp0[x] = corr.cre
        dtab.d0m[x] = corr.ann
        dtab.dpm[x] = corr.time
    ut = iota(n_transform(t, l), basis)
    u0 = iota(n_transform(0.0, l), basis)
    lhs = weighted_adjoint(ut, basis) @ ut - weighted_adjoint(u0, basis) @ u0
    rhs = single_integral(t, dtab, basis)
    op_defect = operator_scale_norm(lhs - rhs, basis, xi_plus, xi_minus)
    return kernel_defect, op_defect
