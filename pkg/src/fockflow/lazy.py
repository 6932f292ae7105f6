"""Matrix-free operators for grid-refinement sweeps.

The dense representation is exponential in the number of grid points, but
the two operator families the convergence studies need have exact product
structure over sites: product kernels represent as a Kronecker product of
one (1+d) x (1+d) factor per site, and chronological evolutions as an
ordered circuit of gates each touching the system factor and one site.
Vectors live in the tensor layout (system axis, one occupation axis of
size 1+d per site); a precomputed index permutation maps to the chain
basis layout for cross checks at small sizes.

Scaled operator norms are estimated by power iteration on the normal
operator, which is adequate for fitting convergence slopes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import FockBasis, Grid

__all__ = [
    "LatticeOp", "KroneckerOp", "GateCircuit", "ComposedOp", "SumOp",
    "DiagOp", "IdentityOp", "site_weight_vector", "weighted_adjoint_op",
    "scaled_power_norm", "tensor_chain_permutation", "dense_from_op",
    "product_kernel_op", "evolution_circuit",
]


class LatticeOp:
    """Minimal matrix-free operator: matvec plus plain conjugate adjoint."""

    shape: tuple[int, int]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __matmul__(self, other: "LatticeOp") -> "ComposedOp":
        return ComposedOp([self, other])

    def __add__(self, other: "LatticeOp") -> "SumOp":
        return SumOp([self, other], [1.0, 1.0])

    def __sub__(self, other: "LatticeOp") -> "SumOp":
        return SumOp([self, other], [1.0, -1.0])


@dataclass
class IdentityOp(LatticeOp):
    dim: int

    def __post_init__(self):
        self.shape = (self.dim, self.dim)

    def matvec(self, v):
        return v

    rmatvec = matvec


@dataclass
class DiagOp(LatticeOp):
    diag: np.ndarray

    def __post_init__(self):
        self.diag = np.asarray(self.diag)
        self.shape = (self.diag.size, self.diag.size)

    def matvec(self, v):
        return self.diag * v

    def rmatvec(self, v):
        return np.conj(self.diag) * v


class ComposedOp(LatticeOp):
    def __init__(self, ops):
        self.ops = list(ops)
        self.shape = (self.ops[0].shape[0], self.ops[-1].shape[1])

    def matvec(self, v):
        for op in reversed(self.ops):
            v = op.matvec(v)
        return v

    def rmatvec(self, v):
        for op in self.ops:
            v = op.rmatvec(v)
        return v


class SumOp(LatticeOp):
    def __init__(self, ops, coeffs):
        self.ops = list(ops)
        self.coeffs = list(coeffs)
        self.shape = self.ops[0].shape

    def matvec(self, v):
        out = np.zeros(self.shape[0], dtype=complex)
        for c, op in zip(self.coeffs, self.ops):
            out += c * op.matvec(v)
        return out

    def rmatvec(self, v):
        out = np.zeros(self.shape[1], dtype=complex)
        for c, op in zip(self.coeffs, self.ops):
            out += np.conj(c) * op.rmatvec(v)
        return out


class KroneckerOp(LatticeOp):
    """System block tensored with one factor per site."""

    def __init__(self, n: int, d: int, sys_block: np.ndarray,
                 site_mats: list[np.ndarray]):
        self.n, self.d = n, d
        self.s = 1 + d
        self.m = len(site_mats)
        self.sys_block = np.asarray(sys_block, dtype=complex)
        self.site_mats = [np.asarray(b, dtype=complex) for b in site_mats]
        dim = n * self.s ** self.m
        self.shape = (dim, dim)

    def _apply(self, v, conj):
        n, s, m = self.n, self.s, self.m
        x = self.sys_block.conj().T if conj else self.sys_block
        t = v.reshape(n, s ** m)
        t = np.tensordot(x, t, axes=(1, 0))
        for i, g in enumerate(self.site_mats):
            gg = g.conj().T if conj else g
            t = t.reshape(n * s ** i, s, s ** (m - 1 - i))
            t = np.einsum("ab,pbq->paq", gg, t)
        return t.reshape(-1)

    def matvec(self, v):
        return self._apply(v, False)

    def rmatvec(self, v):
        return self._apply(v, True)


class GateCircuit(LatticeOp):
    """Ordered product of gates on (system, one site), earliest first.

    ``gates[i]`` has shape (n(1+d), n(1+d)) and acts on the system factor
    together with site i; the optional initial system gate applies first.
    """

    def __init__(self, n: int, d: int, gates: list[np.ndarray],
                 sys_gate: np.ndarray | None = None):
        self.n, self.d = n, d
        self.s = 1 + d
        self.m = len(gates)
        self.gates = [np.asarray(g, dtype=complex).reshape(n, self.s, n,
                                                           self.s)
                      for g in gates]
        self.sys_gate = None if sys_gate is None else \
            np.asarray(sys_gate, dtype=complex)
        dim = n * self.s ** self.m
        self.shape = (dim, dim)

    def _site_apply(self, v, i, g4):
        n, s, m = self.n, self.s, self.m
        t = v.reshape(n, s ** i, s, s ** (m - 1 - i))
        t = np.einsum("ABhb,hpbq->ApBq", g4, t)
        return t.reshape(-1)

    def matvec(self, v):
        if self.sys_gate is not None:
            v = np.tensordot(self.sys_gate,
                             v.reshape(self.n, -1), axes=(1, 0)).reshape(-1)
        for i, g4 in enumerate(self.gates):
            v = self._site_apply(v, i, g4)
        return v

    def rmatvec(self, v):
        for i in range(self.m - 1, -1, -1):
            g4h = self.gates[i].conj().transpose(2, 3, 0, 1)
            v = self._site_apply(v, i, g4h)
        if self.sys_gate is not None:
            v = np.tensordot(self.sys_gate.conj().T,
                             v.reshape(self.n, -1), axes=(1, 0)).reshape(-1)
        return v


# ---------------------------------------------------------------------------
# scalings and norms


def site_weight_vector(grid: Grid, xi: float, n: int | None = None) \
        -> np.ndarray:
    """Tensor-layout coordinate weights: product over occupied sites of
    xi * w(site)."""
    n = grid.system_dim if n is None else n
    d = grid.noise_dim
    out = np.ones(n)
    for x in range(grid.m):
        site = np.concatenate(([1.0], np.full(d, xi * grid.weights[x])))
        out = np.kron(out, site)
    return out


def weighted_adjoint_op(op: LatticeOp, w2: np.ndarray) -> LatticeOp:
    """Adjoint of op with respect to the weighted inner product, as an
    operator chain."""

    class _Adj(LatticeOp):
        def __init__(self):
            self.shape = (op.shape[1], op.shape[0])

        def matvec(self, v):
            return op.rmatvec(w2 * v) / w2

        def rmatvec(self, v):
            return op.matvec(v / w2) * w2

    return _Adj()


def scaled_power_norm(op: LatticeOp, w_minus: np.ndarray,
                      w_plus: np.ndarray, iters: int = 120,
                      seed: int = 0, starts: int = 2) -> float:
    """Power-iteration estimate of the largest singular value of
    diag(sqrt(w_minus)) op diag(1/sqrt(w_plus))."""
    sm = np.sqrt(w_minus)
    sp = np.sqrt(w_plus)

    def av(v):
        return sm * op.matvec(v / sp)

    def ahv(v):
        return op.rmatvec(sm * v) / sp

    rng = np.random.default_rng(seed)
    best = 0.0
    dim = op.shape[1]
    for _ in range(starts):
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        sigma = 0.0
        for _ in range(iters):
            w = av(v)
            sigma = np.linalg.norm(w)
            if sigma == 0.0:
                break
            v = ahv(w)
            nv = np.linalg.norm(v)
            if nv == 0.0:
                break
            v /= nv
        best = max(best, float(sigma))
    return best


# ---------------------------------------------------------------------------
# builders and cross-layout checks


def product_kernel_op(grid: Grid, x: np.ndarray, f) -> KroneckerOp:
    """Representation of a product kernel as a site Kronecker product.

    Each site factor is [[1 + w f_time, w f_ann], [f_cre, f_gauge]] in the
    (unoccupied, occupied) block layout.
    """
    d = grid.noise_dim
    mats = []
    for p in range(grid.m):
        w = grid.weights[p]
        site = np.zeros((1 + d, 1 + d), dtype=complex)
        site[0, 0] = 1.0 + w * f.gpm[p]
        site[0, 1:] = w * np.asarray(f.g0m[p])
        site[1:, 0] = np.asarray(f.gp0[p])
        site[1:, 1:] = np.asarray(f.g00[p])
        mats.append(site)
    return KroneckerOp(grid.system_dim, d, x, mats)


def evolution_circuit(t: float, f, t0: np.ndarray) -> GateCircuit:
    """Chronological evolution as an ordered gate circuit.

    The gate at site x acts on the (system, occupation) pair: the
    unoccupied channel carries 1 + w * time-block, occupation transitions
    carry the creation/annihilation blocks (annihilation weighted), and
    the occupied channel the full gauge block.  Sites at or past the
    cutoff contribute identity gates.
    """
    grid = f.grid
    n, d = grid.system_dim, grid.noise_dim
    s = 1 + d
    live = set(grid.points_before(t))
    gates = []
    for x in range(grid.m):
        if x not in live:
            gates.append(np.eye(n * s, dtype=complex))
            continue
        w = grid.weights[x]
        g4 = np.zeros((n, s, n, s), dtype=complex)
        g4[:, 0, :, 0] = np.eye(n) + w * f.fpm[x]
        g4[:, 1:, :, 0] = f.fp0[x].reshape(n, d, n)
        g4[:, 0, :, 1:] = w * f.f0m[x].reshape(n, n, d)
        g4[:, 1:, :, 1:] = f.f00[x].reshape(n, d, n, d)
        gates.append(g4.reshape(n * s, n * s))
    return GateCircuit(n, d, gates, sys_gate=np.asarray(t0, dtype=complex))


def tensor_chain_permutation(basis: FockBasis) -> np.ndarray:
    """Index map: chain-basis coordinate of each tensor-layout coordinate."""
    grid = basis.grid
    n, d = basis.n, basis.d
    s = 1 + d
    m = grid.m
    dim = n * s ** m
    out = np.empty(dim, dtype=np.int64)
    for idx in range(dim):
        rest = idx
        occ = []
        for i in range(m - 1, -1, -1):
            rest, o = divmod(rest, s)
            occ.append(o)
        occ.reverse()
        h = rest
        chain = tuple(i for i, o in enumerate(occ) if o > 0)
        inner = h
        for i in chain:
            inner = inner * d + (occ[i] - 1)
        out[idx] = basis.offsets[basis.index[chain]] + inner
    return out


def dense_from_op(op: LatticeOp) -> np.ndarray:
    dim = op.shape[1]
    out = np.zeros(op.shape, dtype=complex)
    e = np.zeros(dim, dtype=complex)
    for j in range(dim):
        e[:] = 0.0
        e[j] = 1.0
        out[:, j] = op.matvec(e.copy())
    return out
