"""Quadrature-backed function spaces on intervals and 2D boxes.

Functions are represented by their values on a quadrature grid; the grid
weights define the L2 inner product. Quasimatrices are ordered collections
of such functions on a shared grid and support Gram matrices, weighted QR,
and projection onto orthogonal complements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridMismatchError(ValueError):
    """Raised when two objects do not live on the same grid."""


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Interval [a, b] with quadrature nodes and positive weights.

    Nodes are strictly ascending with nodes[0] == a and nodes[-1] == b,
    and the weights sum to b - a (the measure of the interval).
    """

    a: float
    b: float
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("need at least two 1D nodes")
        if weights.shape != nodes.shape:
            raise ValueError("weights/nodes length mismatch")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly ascending")
        if not (np.isclose(nodes[0], self.a) and np.isclose(nodes[-1], self.b)):
            raise ValueError("nodes must span [a, b]")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if not np.isclose(weights.sum(), self.b - self.a, rtol=1e-9, atol=0):
            raise ValueError("weights must sum to b - a")

    @classmethod
    def uniform(cls, a: float, b: float, n: int) -> "Grid1D":
        """Uniform grid with composite-trapezoid weights."""
        if n < 2:
            raise ValueError("need n >= 2 nodes")
        nodes = np.linspace(a, b, n)
        h = (b - a) / (n - 1)
        w = np.full(n, h)
        w[0] = w[-1] = h / 2
        return cls(a, b, nodes, w)

    @classmethod
    def from_nodes(cls, nodes) -> "Grid1D":
        """Trapezoid weights for arbitrary ascending nodes."""
        nodes = np.asarray(nodes, dtype=float)
        w = np.empty_like(nodes)
        w[1:-1] = (nodes[2:] - nodes[:-2]) / 2
        w[0] = (nodes[1] - nodes[0]) / 2
        w[-1] = (nodes[-1] - nodes[-2]) / 2
        return cls(nodes[0], nodes[-1], nodes, w)

    @property
    def npoints(self) -> int:
        return self.nodes.size

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    def same_as(self, other) -> bool:
        return self is other or (
            isinstance(other, Grid1D)
            and self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
        )


@dataclass(frozen=True)
class Grid2D:
    """Tensor-product grid; node (i, j) has weight wx_i * wy_j.

    Nodes are flattened row-major: flat index = i * ny + j.
    """

    gx: Grid1D
    gy: Grid1D

    @property
    def npoints(self) -> int:
        return self.gx.npoints * self.gy.npoints

    @property
    def shape(self) -> tuple[int, int]:
        return (self.gx.npoints, self.gy.npoints)

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.gx.weights, self.gy.weights).ravel()

    def meshgrid(self):
        return np.meshgrid(self.gx.nodes, self.gy.nodes, indexing="ij")

    def same_as(self, other) -> bool:
        return self is other or (
            isinstance(other, Grid2D)
            and self.gx.same_as(other.gx)
            and self.gy.same_as(other.gy)
        )


def _weights_of(grid) -> np.ndarray:
    return grid.weights if isinstance(grid, Grid2D) else grid.weights


def _check_same_grid(g1, g2):
    if not g1.same_as(g2):
        raise GridMismatchError("objects live on different grids")


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Scalar (real or complex) function sampled on a grid."""

    grid: object  # Grid1D | Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 2 and isinstance(self.grid, Grid2D):
            values = values.ravel()
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size != self.grid.npoints:
            raise ValueError("values length must equal node count")

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self).real))

    def __add__(self, other):
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * c)

    __rmul__ = __mul__


def inner_product(u: GridFunction, v: GridFunction):
    """Weighted L2 inner product, conjugate-linear in the first argument."""
    _check_same_grid(u.grid, v.grid)
    w = _weights_of(u.grid)
    out = np.sum(w * np.conj(u.values) * v.values)
    if not (u.is_complex or v.is_complex):
        return float(out.real)
    return complex(out)


@dataclass(frozen=True, eq=False)
class Quasimatrix:
    """Ordered columns of grid functions on a shared grid.

    ``values`` has shape (npoints, k); column j is the j-th function.
    """

    grid: object
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        if values.shape[0] != self.grid.npoints:
            raise ValueError("column length must equal node count")

    @classmethod
    def from_columns(cls, columns) -> "Quasimatrix":
        columns = list(columns)
        grid = columns[0].grid
        for c in columns[1:]:
            _check_same_grid(grid, c.grid)
        return cls(grid, np.column_stack([c.values for c in columns]))

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    def column(self, j: int) -> GridFunction:
        return GridFunction(self.grid, self.values[:, j])

    def columns(self):
        return [self.column(j) for j in range(self.ncols)]

    def __matmul__(self, small: np.ndarray) -> "Quasimatrix":
        return Quasimatrix(self.grid, self.values @ np.asarray(small))


def gram(B: Quasimatrix) -> np.ndarray:
    """k x k matrix of pairwise inner products B* B (Hermitian)."""
    w = _weights_of(B.grid)
    return np.conj(B.values).T @ (w[:, None] * B.values)


def cross_gram(A: Quasimatrix, B: Quasimatrix) -> np.ndarray:
    """Matrix of inner products A* B."""
    _check_same_grid(A.grid, B.grid)
    w = _weights_of(A.grid)
    return np.conj(A.values).T @ (w[:, None] * B.values)


# Columns whose R diagonal falls below this times the largest diagonal are
# treated as numerically dependent and dropped.
RANK_TOL = 1e-12


def qr(B: Quasimatrix) -> tuple[Quasimatrix, np.ndarray]:
    """QR factorization under the weighted inner product.

    Node values are scaled by sqrt(weights) so a dense QR reproduces the
    weighted inner product exactly; R is sign-fixed to a non-negative
    diagonal. Numerically dependent columns are dropped, so Q may have
    fewer columns than B (the returned R keeps one row per kept column).
    """
    if B.ncols < 1:
        raise ValueError("quasimatrix must have at least one column")
    w = _weights_of(B.grid)
    sw = np.sqrt(w)
    A = sw[:, None] * B.values
    Qs, R = np.linalg.qr(A, mode="reduced")
    d = np.diag(R)
    safe = np.where(np.abs(d) > 0, np.abs(d), 1.0)
    phase = np.where(np.abs(d) > 0, d / safe, 1.0)
    Qs = Qs * phase[None, :]
    R = np.conj(phase)[:, None] * R
    diag = np.abs(np.diag(R))
    if diag.max() == 0:
        raise ValueError("all columns are numerically zero")
    if np.any(diag < RANK_TOL * diag.max()):
        # rank deficient: a pivoted factorization picks an independent
        # column subset whose span covers every column, then B = QR is
        # re-expressed exactly against that basis (R upper-staircase)
        import scipy.linalg

        Qp, Rp, _ = scipy.linalg.qr(A, mode="economic", pivoting=True)
        dp = np.abs(np.diag(Rp))
        rank = int(np.sum(dp >= RANK_TOL * dp.max()))
        Qs = Qp[:, :rank]
        R = np.conj(Qs).T @ A
        lead = R[np.arange(rank), np.argmax(np.abs(R) > RANK_TOL * dp.max(), axis=1)]
        safe = np.where(np.abs(lead) > 0, np.abs(lead), 1.0)
        phase = np.where(np.abs(lead) > 0, lead / safe, 1.0)
        Qs = Qs * phase[None, :]
        R = np.conj(phase)[:, None] * R
    Q = Quasimatrix(B.grid, Qs / sw[:, None])
    return Q, R


def project_complement(Q: Quasimatrix, G: Quasimatrix) -> Quasimatrix:
    """Remove the component of each column of G lying in span(Q).

    Q must have orthonormal columns under the weighted inner product.
    """
    _check_same_grid(Q.grid, G.grid)
    C = cross_gram(Q, G)
    return Quasimatrix(G.grid, G.values - Q.values @ C)
