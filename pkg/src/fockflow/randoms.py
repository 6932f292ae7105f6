"""Seeded random instances shared by the test batteries and the harness.

All blocks are drawn with independent standard complex Gaussian entries and
then normalized to unit spectral norm, so defect tolerances and exponential
bounds stay comparable across instances.
"""

from __future__ import annotations

import numpy as np

from .evolution import GeneratorField, HamiltonianField, \
    hamiltonian_to_scattering
from .kernels import Kernel, KernelTable, NoiseTriangular, iter_tables, \
    point_table, table
from .lattice import FockBasis, FockVector, Grid
from .fockrep import IntegrandTable

__all__ = [
    "complex_gaussian", "normalized_block", "random_kernel",
    "random_pointwise_integrand", "random_noise_triangular",
    "random_product_kernel_data", "random_pseudo_hermitian_field",
    "random_pseudo_unitary_field", "random_fock_vector",
    "random_multi_integrand", "random_weight_matrix",
    "random_step_process",
]


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def normalized_block(rng: np.random.Generator, shape) -> np.ndarray:
    b = complex_gaussian(rng, shape)
    nb = np.linalg.norm(b, 2) if b.ndim == 2 else np.linalg.norm(b)
    return b / nb if nb > 0 else b


def random_kernel(grid: Grid, rng: np.random.Generator,
                  density: float = 1.0) -> Kernel:
    """Kernel with normalized random blocks on a fraction of all tables."""
    k = Kernel(grid)
    for t in iter_tables(grid.m):
        if density < 1.0 and rng.random() > density:
            continue
        k.set_block(t, normalized_block(rng, k.expected_shape(t)))
    return k


def random_pointwise_integrand(grid: Grid, rng: np.random.Generator,
                               with_initial: bool = True) -> Kernel:
    """Kernel supported on single-point tables, optionally with an initial
    block at the empty table."""
    k = Kernel(grid)
    if with_initial:
        k.set_block(table(), normalized_block(
            rng, (grid.system_dim, grid.system_dim)))
    for x in range(grid.m):
        for slot in ("ann", "time", "gauge", "cre"):
            t = point_table(x, slot)
            k.set_block(t, normalized_block(rng, k.expected_shape(t)))
    return k


def random_noise_triangular(grid: Grid, rng: np.random.Generator,
                            constant: bool = False) -> NoiseTriangular:
    """Random per-point one-particle deviation data (strict part only)."""
    d = grid.noise_dim
    f = NoiseTriangular.identity(grid.m, d)
    pts = range(1 if constant else grid.m)
    vals = []
    for _ in pts:
        vals.append((normalized_block(rng, (d, d)),
                     normalized_block(rng, (d,)),
                     normalized_block(rng, (d,)),
                     complex(complex_gaussian(rng, ())) / np.sqrt(2)))
    for x in range(grid.m):
        g00, gp0, g0m, gpm = vals[0 if constant else x]
        f.g00[x] = f.g00[x] + g00
        f.gp0[x] = gp0.copy()
        f.g0m[x] = g0m.copy()
        f.gpm[x] = gpm
    return f


def random_product_kernel_data(grid: Grid, rng: np.random.Generator,
                               constant: bool = False) \
        -> tuple[np.ndarray, NoiseTriangular]:
    x = normalized_block(rng, (grid.system_dim, grid.system_dim))
    return x, random_noise_triangular(grid, rng, constant=constant)


def random_pseudo_hermitian_field(grid: Grid, rng: np.random.Generator,
                                  scale: float = 1.0,
                                  constant: bool = False) \
        -> HamiltonianField:
    n, d = grid.system_dim, grid.noise_dim
    h00, hp0, h0m, hpm = [], [], [], []
    count = 1 if constant else grid.m
    vals = []
    for _ in range(count):
        a = complex_gaussian(rng, (n * d, n * d))
        a = (a + a.conj().T) / 2
        a = scale * a / max(np.linalg.norm(a, 2), 1e-30)
        b = scale * normalized_block(rng, (n * d, n))
        c = complex_gaussian(rng, (n, n))
        c = (c + c.conj().T) / 2
        c = scale * c / max(np.linalg.norm(c, 2), 1e-30)
        vals.append((a, b, c))
    for x in range(grid.m):
        a, b, c = vals[0 if constant else x]
        h00.append(a)
        hp0.append(b)
        h0m.append(b.conj().T)
        hpm.append(c)
    return HamiltonianField(grid, h00, hp0, h0m, hpm)


def random_pseudo_unitary_field(grid: Grid, rng: np.random.Generator,
                                scale: float = 1.0,
                                constant: bool = False) -> GeneratorField:
    return hamiltonian_to_scattering(
        random_pseudo_hermitian_field(grid, rng, scale, constant))


def random_fock_vector(basis: FockBasis, rng: np.random.Generator) \
        -> FockVector:
    data = complex_gaussian(rng, basis.dim)
    return FockVector(basis, data / np.linalg.norm(data))


def random_multi_integrand(basis: FockBasis, rng: np.random.Generator,
                           t: float) -> dict[KernelTable, np.ndarray]:
    """Normalized random blocks for every table before the cutoff."""
    grid = basis.grid
    live = set(grid.points_before(t))
    d = basis.d
    out = {}
    for tab in iter_tables(grid.m):
        if not set(tab.points()) <= live:
            continue
        dr = basis.dim * d ** len(tab.row_pts())
        dc = basis.dim * d ** len(tab.col_pts())
        out[tab] = normalized_block(rng, (dr, dc))
    return out


def random_weight_matrix(grid: Grid, rng: np.random.Generator):
    from .kernels import WeightMatrix
    m = grid.m
    return WeightMatrix(rng.random(m) + 0.5, rng.random(m) + 0.5,
                        rng.random(m) + 0.5, rng.random(m) + 0.5)


def random_step_process(basis: FockBasis, rng: np.random.Generator,
                        pieces: int = 2):
    """Adapted piecewise-constant process built from evolution snapshots."""
    from .evolution import solve_evolution
    from .fockrep import StepProcess
    grid = basis.grid
    f = random_pseudo_unitary_field(grid, rng)
    total = grid.t_max
    bounds = tuple(np.linspace(0.0, total, pieces + 1))
    ops = [solve_evolution(bounds[i], f, np.eye(basis.n), basis)
           for i in range(pieces)]
    return StepProcess(bounds, ops)
