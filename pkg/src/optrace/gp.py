"""Random probe functions from a mean-zero Gaussian process.

The covariance is the squared-exponential kernel with length-scale ell,
normalized to unit integral over the real line (tensor product of 1D
kernels in 2D). Sampling factorizes the grid covariance once and derives
one RNG stream per (seed, stream, column), so columns are reproducible
independently of evaluation order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .grids import Grid1D, Grid2D, Quasimatrix

SEED_ENV_VAR = "OPTRACE_SEED"

# Escalating relative jitter for the covariance factorization.
_JITTERS = (0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


class DegenerateCovarianceError(RuntimeError):
    """Covariance factorization failed even at the maximum jitter."""


def default_seed(fallback: int = 0) -> int:
    """Seed from the OPTRACE_SEED environment variable, else ``fallback``."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return fallback
    return int(raw) & (2**64 - 1)


@dataclass(frozen=True)
class SECovariance:
    """Squared-exponential covariance with unit mass.

    In 1D: K(x, y) = exp(-(x-y)^2 / (2 ell^2)) / (ell sqrt(2 pi)).
    In 2D the kernel is the product of 1D kernels per coordinate.
    """

    ell: float
    dim: int = 1

    def __post_init__(self):
        if self.ell <= 0:
            raise ValueError("length-scale must be positive")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")

    def kernel_1d(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        s = self.ell * np.sqrt(2 * np.pi)
        return np.exp(-((x - y) ** 2) / (2 * self.ell**2)) / s

    def kernel(self, p, q) -> np.ndarray:
        """Kernel value at points p, q (scalars or arrays; tuples in 2D)."""
        if self.dim == 1:
            return self.kernel_1d(p, q)
        return self.kernel_1d(p[0], q[0]) * self.kernel_1d(p[1], q[1])


def covariance_matrix(cov: SECovariance, grid) -> np.ndarray:
    """Dense grid covariance K_ij = K(node_i, node_j)."""
    if isinstance(grid, Grid2D):
        if cov.dim != 2:
            raise ValueError("2D grid needs a dim=2 covariance")
        kx = covariance_matrix(SECovariance(cov.ell, 1), grid.gx)
        ky = covariance_matrix(SECovariance(cov.ell, 1), grid.gy)
        return np.kron(kx, ky)
    x = grid.nodes
    return cov.kernel_1d(x[:, None], x[None, :])


def _factor_with_jitter(K: np.ndarray):
    scale = float(np.max(np.diag(K)))
    for jit in _JITTERS:
        try:
            L = np.linalg.cholesky(K + jit * scale * np.eye(K.shape[0]))
            return L, jit
        except np.linalg.LinAlgError:
            continue
    raise DegenerateCovarianceError(
        "grid covariance is numerically singular beyond jitter 1e-8; "
        "the length-scale is too large for this grid"
    )


def _stream_rng(seed: int, stream: int) -> np.random.Generator:
    bits = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    return np.random.Generator(bits)


@dataclass(frozen=True, eq=False)
class ProbeSampler:
    """Draws quasimatrices of i.i.d. GP sample paths on a fixed grid.

    Column j of stream s is a deterministic function of (seed, s, j), so
    sampling is order-independent and bit-reproducible across runs.
    """

    covariance: SECovariance
    grid: object
    seed: int
    _factors: tuple = field(init=False, repr=False, default=None)
    jitter: float = field(init=False, default=0.0)

    def __post_init__(self):
        if isinstance(self.grid, Grid2D):
            if self.covariance.dim != 2:
                raise ValueError("2D grid needs a dim=2 covariance")
            cov1 = SECovariance(self.covariance.ell, 1)
            lx, jx = _factor_with_jitter(covariance_matrix(cov1, self.grid.gx))
            ly, jy = _factor_with_jitter(covariance_matrix(cov1, self.grid.gy))
            object.__setattr__(self, "_factors", (lx, ly))
            object.__setattr__(self, "jitter", max(jx, jy))
        else:
            if self.covariance.dim != 1:
                raise ValueError("1D grid needs a dim=1 covariance")
            L, jit = _factor_with_jitter(covariance_matrix(self.covariance, self.grid))
            object.__setattr__(self, "_factors", (L,))
            object.__setattr__(self, "jitter", jit)

    def sample(self, count: int, stream: int = 0) -> Quasimatrix:
        """Quasimatrix whose ``count`` columns are independent GP draws.

        The RNG is keyed by (seed, stream) and consumed in column blocks,
        so the normal draws behind column j depend only on (seed, stream,
        j); a fixed request is reproducible bit-for-bit across runs.
        """
        if count < 1:
            raise ValueError("need count >= 1")
        rng = _stream_rng(self.seed, stream)
        if isinstance(self.grid, Grid2D):
            lx, ly = self._factors
            nx, ny = self.grid.shape
            Z = rng.standard_normal((count, nx, ny))
            cols = np.empty((nx * ny, count))
            for j in range(count):
                cols[:, j] = (lx @ Z[j] @ ly.T).ravel()
            return Quasimatrix(self.grid, cols)
        (L,) = self._factors
        n = self.grid.npoints
        Z = rng.standard_normal((count, n))
        return Quasimatrix(self.grid, L @ Z.T)


def kernel_op_norm(cov: SECovariance, grid) -> float:
    """Operator norm of the covariance acting on L2 of the grid.

    Computed as the largest eigenvalue of D^(1/2) K D^(1/2) with D the
    diagonal weight matrix; in 2D the tensor structure gives the product
    of the per-axis norms.
    """
    if isinstance(grid, Grid2D):
        cov1 = SECovariance(cov.ell, 1)
        return kernel_op_norm(cov1, grid.gx) * kernel_op_norm(cov1, grid.gy)
    K = covariance_matrix(cov, grid)
    sw = np.sqrt(grid.weights)
    A = sw[:, None] * K * sw[None, :]
    return float(np.linalg.eigvalsh(A)[-1])


def covariance_eigenvalues(cov: SECovariance, grid: Grid1D) -> np.ndarray:
    """All eigenvalues of the weighted covariance operator, descending."""
    K = covariance_matrix(cov, grid)
    sw = np.sqrt(grid.weights)
    A = sw[:, None] * K * sw[None, :]
    ev = np.linalg.eigvalsh(A)[::-1]
    return np.clip(ev, 0.0, None)
