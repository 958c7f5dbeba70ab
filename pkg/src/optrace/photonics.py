"""Mean-square field intensity from spatially incoherent sources.

A z-invariant dielectric cross-section sits inside the unit square,
surrounded by a perfectly-matched layer; currents supported on the
(smoothed) cross-section drive a 2D Helmholtz solve, and the mean-square
field intensity over the square is a trace handled by the randomized
estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .estimators import cont_hutch_pp, hutchinson
from .gp import ProbeSampler, SECovariance
from .grids import Grid1D, Grid2D, GridFunction, GridMismatchError, Quasimatrix
from .operators import LinearOperator

SHAPES = ("disk", "quadrifolium", "disk_with_astroid_cutout")

EPS_BACKGROUND = 1.0
EPS_DIELECTRIC = 12.0


@dataclass(frozen=True)
class CrossSection:
    """Dielectric cross-section, contained in the disk of radius ``scale``."""

    shape: str = "disk"
    scale: float = 0.5

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def indicator(self, X, Y) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if self.shape == "disk":
            return (X**2 + Y**2 <= self.scale**2).astype(float)
        if self.shape == "quadrifolium":
            r = np.hypot(X, Y)
            th = np.arctan2(Y, X)
            return (r <= self.scale * np.abs(np.cos(2 * th))).astype(float)
        disk = X**2 + Y**2 <= self.scale**2
        cut = (np.abs(X) ** (2.0 / 3.0) + np.abs(Y) ** (2.0 / 3.0)
               <= (self.scale / 2.0) ** (2.0 / 3.0))
        return (disk & ~cut).astype(float)


def _blur_1d(values: np.ndarray, axis: int, offsets: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    n = values.shape[axis]
    for off, tap in zip(offsets, taps):
        src = slice(max(0, -off), min(n, n - off))
        dst = slice(max(0, off), min(n, n + off))
        idx_src = [slice(None)] * values.ndim
        idx_dst = [slice(None)] * values.ndim
        idx_src[axis] = src
        idx_dst[axis] = dst
        out[tuple(idx_dst)] += tap * values[tuple(idx_src)]
    return out


def smoothed_indicator(shape: CrossSection, grid2d: Grid2D, sigma_smooth: float) -> GridFunction:
    """Gaussian-smoothed shape indicator, clamped to [0, 1].

    Quadrature discretization of the Gaussian convolution, separable per
    axis; the grid must be uniform in each direction.
    """
    if sigma_smooth <= 0:
        raise ValueError("sigma_smooth must be positive")
    X, Y = grid2d.meshgrid()
    ind = shape.indicator(X, Y)
    out = ind
    for axis, g1 in enumerate((grid2d.gx, grid2d.gy)):
        h = g1.spacing
        radius = max(1, int(np.ceil(6 * sigma_smooth / h)))
        offsets = np.arange(-radius, radius + 1)
        taps = (np.exp(-((offsets * h) ** 2) / (2 * sigma_smooth**2))
                * h / (sigma_smooth * np.sqrt(2 * np.pi)))
        out = _blur_1d(out, axis, offsets, taps)
    return GridFunction(grid2d, np.clip(out, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class PermittivityField:
    grid2d: Grid2D
    xi: GridFunction
    eps: GridFunction
    sigma_smooth: float
    eps1: float = EPS_BACKGROUND
    eps2: float = EPS_DIELECTRIC

    @classmethod
    def from_shape(cls, shape: CrossSection, grid2d: Grid2D,
                   sigma_smooth: float) -> "PermittivityField":
        xi = smoothed_indicator(shape, grid2d, sigma_smooth)
        eps = GridFunction(grid2d, EPS_BACKGROUND + xi.values * (EPS_DIELECTRIC - EPS_BACKGROUND))
        return cls(grid2d=grid2d, xi=xi, eps=eps, sigma_smooth=sigma_smooth)


def _stretched_second_difference(nodes: np.ndarray, h: float, gamma) -> sp.csr_matrix:
    """1D (1/gx) d/dx (1/gx d/dx) stencil with Dirichlet walls outside."""
    n = nodes.size
    gn = gamma(nodes)
    gh = gamma(nodes + h / 2)          # right half-node of each node
    ghl = gamma(nodes - h / 2)         # left half-node
    main = np.empty(n, dtype=complex)
    lo = np.empty(n - 1, dtype=complex)
    up = np.empty(n - 1, dtype=complex)
    for i in range(n):
        c = 1.0 / (gn[i] * h * h)
        main[i] = -c * (1.0 / ghl[i] + 1.0 / gh[i])
        if i > 0:
            lo[i - 1] = c / ghl[i]
        if i < n - 1:
            up[i] = c / gh[i]
    return sp.diags([lo, main, up], [-1, 0, 1], format="csr")


class HelmholtzPML2D:
    """Screened 2D Helmholtz solve Delta E - omega^2 eps E = i omega b.

    The computational domain is the unit square plus a PML collar of unit
    thickness realized by complex coordinate stretching with factors
    1 / (1 + i s(x) / omega), where s ramps quadratically from 0 to the
    PML strength across the collar. Homogeneous Dirichlet conditions hold
    on the outer boundary. One sparse factorization is cached and shared
    by forward and adjoint solves.
    """

    def __init__(self, permittivity: PermittivityField, omega: float,
                 pml_strength: float = 1.0, pml_thickness: float = 1.0):
        if omega <= 0:
            raise ValueError("omega must be positive")
        self.omega = float(omega)
        self.permittivity = permittivity
        self.grid = permittivity.grid2d
        gx, gy = self.grid.gx, self.grid.gy
        if abs(gx.spacing - gy.spacing) > 1e-12:
            raise ValueError("PML grid must have equal spacing per direction")

        strength = float(pml_strength)
        thickness = float(pml_thickness)

        def gamma(xv):
            d = np.clip(np.abs(np.asarray(xv, dtype=float)) - 1.0, 0.0, None)
            s = strength * (d / thickness) ** 2
            return 1.0 + 1j * s / self.omega

        Lx = _stretched_second_difference(gx.nodes, gx.spacing, gamma)
        Ly = _stretched_second_difference(gy.nodes, gy.spacing, gamma)
        Ix = sp.identity(gx.npoints, format="csr")
        Iy = sp.identity(gy.npoints, format="csr")
        eps_flat = permittivity.eps.values
        A = sp.kron(Lx, Iy) + sp.kron(Ix, Ly) - sp.diags(self.omega**2 * eps_flat)
        self.matrix = A.tocsc()
        self._lu = spla.splu(self.matrix)

    def solve(self, b: GridFunction) -> GridFunction:
        """Field produced by the current amplitude b (right side i omega b)."""
        if not self.grid.same_as(b.grid):
            raise GridMismatchError("source not on solver grid")
        rhs = 1j * self.omega * b.values.astype(complex)
        return GridFunction(self.grid, self._lu.solve(rhs))

    def solve_batch(self, V: np.ndarray) -> np.ndarray:
        return self._lu.solve(1j * self.omega * np.ascontiguousarray(V, dtype=complex))

    def solve_adjoint_batch(self, V: np.ndarray) -> np.ndarray:
        """Conjugate-transpose solves against the same factorization."""
        return self._lu.solve(np.ascontiguousarray(V, dtype=complex), trans="H") * (-1j * self.omega)


def _padded_axis(n_interior: int) -> tuple[Grid1D, slice, int]:
    """Interior axis on [-1, 1] extended by a unit-thickness collar."""
    if n_interior < 8:
        raise ValueError("need at least 8 interior grid points per direction")
    h = 2.0 / (n_interior - 1)
    w = int(np.ceil(1.0 / h))
    nodes = np.concatenate([
        -1.0 - h * np.arange(w, 0, -1),
        np.linspace(-1.0, 1.0, n_interior),
        1.0 + h * np.arange(1, w + 1),
    ])
    return Grid1D.from_nodes(nodes), slice(w, w + n_interior), w


class FieldIntensityOperator(LinearOperator):
    """Self-adjoint PSD operator whose trace is the mean-square intensity.

    The quadratic form of a probe g is the xi-weighted square integral of
    the field driven by the current xi * g; applying the operator costs
    one forward and one adjoint solve against the shared factorization.
    """

    self_adjoint = True

    def __init__(self, shape: CrossSection, omega: float, n_interior: int = 100,
                 pml_strength: float = 1.0, pml_thickness: float = 1.0):
        axis, self._isl, self._w = _padded_axis(n_interior)
        self.full_grid = Grid2D(axis, axis)
        inner = Grid1D.uniform(-1.0, 1.0, n_interior)
        self.grid = Grid2D(inner, inner)
        self.n_interior = n_interior
        self.shape = shape
        self.omega = float(omega)
        sigma_smooth = inner.spacing / 2.0
        self.permittivity = PermittivityField.from_shape(shape, self.full_grid, sigma_smooth)
        self.solver = HelmholtzPML2D(self.permittivity, omega,
                                     pml_strength=pml_strength,
                                     pml_thickness=pml_thickness)
        nx = self.full_grid.gx.npoints
        self._xi_int = self.permittivity.xi.values.reshape(nx, nx)[self._isl, self._isl].copy()
        self._w2 = np.outer(inner.weights, inner.weights)
        self.region_measure = float(np.sum(self._xi_int * self._w2))

    # -- plumbing between the interior square and the padded solver grid

    def _embed(self, interior: np.ndarray) -> np.ndarray:
        nx = self.full_grid.gx.npoints
        full = np.zeros((nx, nx, interior.shape[2]) if interior.ndim == 3 else (nx, nx),
                        dtype=complex)
        full[self._isl, self._isl] = interior
        return full

    def field_batch(self, V: np.ndarray) -> np.ndarray:
        """E_z on the interior square for each probe column (n, n, k)."""
        n = self.n_interior
        k = V.shape[1]
        src = self._xi_int[:, :, None] * V.reshape(n, n, k)
        full = self._embed(src)
        nx = self.full_grid.gx.npoints
        sol = self.solver.solve_batch(full.reshape(nx * nx, k))
        return sol.reshape(nx, nx, k)[self._isl, self._isl, :]

    def quadratic_form_batch(self, B: Quasimatrix) -> np.ndarray:
        if not self.grid.same_as(B.grid):
            raise GridMismatchError("probes not on the interior grid")
        E = self.field_batch(B.values)
        return np.einsum("ijk,ij->k", np.abs(E) ** 2, self._xi_int * self._w2)

    def quadratic_form(self, g: GridFunction) -> float:
        return float(self.quadratic_form_batch(Quasimatrix(g.grid, g.values))[0])

    def apply_batch(self, B: Quasimatrix) -> Quasimatrix:
        if not self.grid.same_as(B.grid):
            raise GridMismatchError("probes not on the interior grid")
        n = self.n_interior
        nx = self.full_grid.gx.npoints
        k = B.ncols
        E = self.field_batch(B.values)
        weighted = (self._xi_int * self._w2)[:, :, None] * E
        full = self._embed(weighted)
        back = self.solver.solve_adjoint_batch(full.reshape(nx * nx, k))
        back_int = back.reshape(nx, nx, k)[self._isl, self._isl, :]
        out = self._xi_int[:, :, None] * back_int / self._w2[:, :, None]
        return Quasimatrix(self.grid, out.reshape(n * n, k))

    def apply(self, u: GridFunction) -> GridFunction:
        return self.apply_batch(Quasimatrix(u.grid, u.values)).column(0)

    def exact_trace(self):
        return None


def mean_field_intensity(shape: CrossSection, omega: float, m: int, ell: float,
                         method: str = "hutchpp", seed: int = 0,
                         n_interior: int = 100, operator: FieldIntensityOperator | None = None):
    """Mean-square field intensity and the underlying trace estimate.

    Probes are tensor-GP samples on the unit square; the reported value is
    the trace estimate divided by the measure of the smoothed
    cross-section.
    """
    op = operator if operator is not None else FieldIntensityOperator(
        shape, omega, n_interior=n_interior)
    sampler = ProbeSampler(SECovariance(ell, dim=2), op.grid, seed=seed)
    if method == "hutchinson":
        est = hutchinson(op, sampler, m)
    elif method == "hutchpp":
        est = cont_hutch_pp(op, sampler, m)
    else:
        raise ValueError("method must be 'hutchinson' or 'hutchpp'")
    return est.value / op.region_measure, est


def dense_intensity_matrix(op: FieldIntensityOperator) -> np.ndarray:
    """Explicit matvec matrix of the intensity operator (coarse grids only).

    Column j is the operator applied to the canonical basis function at
    node j; the matrix trace equals the quadrature trace of the kernel.
    """
    n2 = op.grid.npoints
    if n2 > 2500:
        raise ValueError(
            "dense path limited to at most 50x50 interior grids; "
            "use a coarser diagnostic resolution"
        )
    basis = Quasimatrix(op.grid, np.eye(n2))
    return op.apply_batch(basis).values


def spectrum_report(shape: CrossSection, omega: float, count: int,
                    n_interior: int = 30) -> np.ndarray:
    """Top eigenvalues of the intensity operator at diagnostic resolution.

    The matvec matrix is symmetrized in the weight-scaled space where the
    operator is Hermitian PSD; eigenvalues return in descending order.
    """
    op = FieldIntensityOperator(shape, omega, n_interior=n_interior)
    H = dense_intensity_matrix(op)
    if count > H.shape[0]:
        raise ValueError("count exceeds the number of grid nodes")
    sw = np.sqrt(op.grid.weights)
    Hw = sw[:, None] * H / sw[None, :]
    Hw = 0.5 * (Hw + Hw.conj().T)
    ev = np.linalg.eigvalsh(Hw)[::-1]
    return ev[:count]
