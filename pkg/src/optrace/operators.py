"""Operator-function products: explicit-kernel integral operators with an
exact-trace oracle, 1D Schrodinger resolvents, and rational-filtered
resolvent combinations used by the density-of-states pipeline.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import (
    Grid1D,
    GridFunction,
    GridMismatchError,
    Quasimatrix,
    inner_product,
)


class LinearOperator:
    """Contract for u -> Fu on a fixed grid.

    Subclasses implement ``apply``; batched variants default to column
    loops and are overridden where a dense/sparse factorization makes a
    single solve or GEMM possible. ``exact_trace`` returns None when no
    trace oracle is available.
    """

    grid = None
    self_adjoint = False

    def apply(self, u: GridFunction) -> GridFunction:
        raise NotImplementedError

    def apply_adjoint(self, u: GridFunction) -> GridFunction:
        if self.self_adjoint:
            return self.apply(u)
        raise NotImplementedError("operator has no adjoint implementation")

    def apply_batch(self, B: Quasimatrix) -> Quasimatrix:
        cols = [self.apply(B.column(j)).values for j in range(B.ncols)]
        return Quasimatrix(self.grid, np.column_stack(cols))

    def quadratic_form(self, g: GridFunction):
        return inner_product(g, self.apply(g))

    def quadratic_form_batch(self, B: Quasimatrix) -> np.ndarray:
        FB = self.apply_batch(B)
        w = self.grid.weights
        return np.einsum("ij,ij->j", np.conj(B.values) * w[:, None], FB.values)

    def exact_trace(self):
        return None


class KernelIntegralOperator(LinearOperator):
    """Integral operator with an explicitly evaluable kernel f(x, y).

    The node-by-node kernel matrix is cached, so applying the operator is
    one weighted matrix product and the trace oracle is the quadrature of
    the kernel diagonal.
    """

    def __init__(self, grid: Grid1D, kernel, name: str = "kernel"):
        self.grid = grid
        self.kernel = kernel
        self.name = name
        x = grid.nodes
        self.matrix = np.asarray(kernel(x[:, None], x[None, :]), dtype=float)
        self.symmetry_defect = float(np.max(np.abs(self.matrix - self.matrix.T)))
        self.self_adjoint = self.symmetry_defect <= 1e-12 * np.max(np.abs(self.matrix))

    def apply(self, u: GridFunction) -> GridFunction:
        if not self.grid.same_as(u.grid):
            raise GridMismatchError("function not on operator grid")
        return GridFunction(self.grid, self.matrix @ (self.grid.weights * u.values))

    def apply_adjoint(self, u: GridFunction) -> GridFunction:
        if not self.grid.same_as(u.grid):
            raise GridMismatchError("function not on operator grid")
        return GridFunction(self.grid, self.matrix.T @ (self.grid.weights * u.values))

    def apply_batch(self, B: Quasimatrix) -> Quasimatrix:
        if not self.grid.same_as(B.grid):
            raise GridMismatchError("quasimatrix not on operator grid")
        w = self.grid.weights
        return Quasimatrix(self.grid, self.matrix @ (w[:, None] * B.values))

    def exact_trace(self) -> float:
        return float(np.sum(self.grid.weights * np.diag(self.matrix)))

    def weighted_matrix(self) -> np.ndarray:
        """D^(1/2) F D^(1/2); its spectrum is the operator's spectrum."""
        sw = np.sqrt(self.grid.weights)
        return sw[:, None] * self.matrix * sw[None, :]

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.weighted_matrix(), compute_uv=False)

    def hs_norm(self) -> float:
        """Hilbert-Schmidt norm, the weighted L2 norm of the kernel."""
        return float(np.linalg.norm(self.weighted_matrix()))


def sinc(u):
    """sin(u)/u with the removable singularity filled in."""
    u = np.asarray(u, dtype=float)
    out = np.ones_like(u)
    nz = u != 0
    out[nz] = np.sin(u[nz]) / u[nz]
    return out


def helmholtz_like_kernel(x, y):
    """Green's-function-flavored test kernel on [-1, 1]^2."""
    return (1 - np.cos(np.pi * (x + 1) / 4)) * np.sin(np.pi * (y + 1) / 4) + (
        1.0 / (1.0 + np.exp(5 * (x - y)))
    ) * (1 - np.cos(np.pi * (y + 1) / 4) * np.sin(np.pi * (x + 1) / 4))


def sinc_mixture_kernel(x, y):
    """Mixture of three sinc kernels at scales 1, 10, 50."""
    d = np.asarray(x) - np.asarray(y)
    return sinc(d) + 0.5 * sinc(10 * d) + 0.25 * sinc(50 * d)


BUILTIN_KERNELS = {
    "helmholtz_like": helmholtz_like_kernel,
    "sinc_mixture": sinc_mixture_kernel,
}


def builtin_kernel(name: str, n: int = 801) -> KernelIntegralOperator:
    """Toy kernel operator on [-1, 1] with an n-node trapezoid grid."""
    try:
        kernel = BUILTIN_KERNELS[name]
    except KeyError:
        raise ValueError(
            f"unknown kernel {name!r}; choose from {sorted(BUILTIN_KERNELS)}"
        ) from None
    return KernelIntegralOperator(Grid1D.uniform(-1.0, 1.0, n), kernel, name=name)


class SchrodingerOperator:
    """Second-order finite-difference discretization of -Lap + v on [-L, L].

    Dirichlet keeps N interior nodes as unknowns (grid has N + 2 nodes);
    periodic identifies the two endpoints (grid has N + 1 nodes, N unique
    unknowns). One sparse factorization per resolvent shift is cached and
    reused across probes.
    """

    def __init__(self, L: float, potential=None, bc: str = "dirichlet", n_interior: int = 2000):
        if bc not in ("dirichlet", "periodic"):
            raise ValueError("bc must be 'dirichlet' or 'periodic'")
        self.L = float(L)
        self.bc = bc
        self.n_interior = int(n_interior)
        self.potential = potential if potential is not None else (lambda x: np.zeros_like(x))
        if bc == "dirichlet":
            self.grid = Grid1D.uniform(-L, L, self.n_interior + 2)
            self._dof = slice(1, self.n_interior + 1)
        else:
            self.grid = Grid1D.uniform(-L, L, self.n_interior + 1)
            self._dof = slice(0, self.n_interior)
        self.h = self.grid.spacing
        x_dof = self.grid.nodes[self._dof]
        v = np.asarray(self.potential(x_dof), dtype=float)
        n = self.n_interior
        h2 = self.h**2
        main = 2.0 / h2 + v
        off = -np.ones(n - 1) / h2
        A = sp.diags([off, main, off], [-1, 0, 1], format="lil")
        if bc == "periodic":
            A[0, n - 1] = -1.0 / h2
            A[n - 1, 0] = -1.0 / h2
        self.matrix = A.tocsc()
        self._lu_cache: dict[complex, object] = {}

    def eigenvalues(self) -> np.ndarray:
        """Dense spectrum of the discretized operator (ascending)."""
        return np.linalg.eigvalsh(self.matrix.toarray())

    def _lu(self, z: complex):
        z = complex(z)
        if z not in self._lu_cache:
            n = self.n_interior
            self._lu_cache[z] = spla.splu((self.matrix - z * sp.identity(n, format="csc")).tocsc())
        return self._lu_cache[z]

    def _to_dof(self, values: np.ndarray) -> np.ndarray:
        return values[self._dof]

    def _from_dof(self, dof_values: np.ndarray) -> np.ndarray:
        n_nodes = self.grid.npoints
        out = np.zeros(n_nodes, dtype=dof_values.dtype)
        out[self._dof] = dof_values
        if self.bc == "periodic":
            out[-1] = out[0]
        return out

    def resolvent_apply(self, z: complex, g: GridFunction) -> GridFunction:
        """Solve (L_h - z) u = g; requires Im(z) != 0."""
        if np.imag(z) == 0:
            raise ValueError("resolvent shift must have nonzero imaginary part")
        if not self.grid.same_as(g.grid):
            raise GridMismatchError("function not on operator grid")
        sol = self._lu(z).solve(self._to_dof(g.values).astype(complex))
        return GridFunction(self.grid, self._from_dof(sol))

    def resolvent_apply_batch(self, z: complex, V: np.ndarray) -> np.ndarray:
        """Resolvent solve for a stack of node-value columns."""
        if np.imag(z) == 0:
            raise ValueError("resolvent shift must have nonzero imaginary part")
        sols = self._lu(z).solve(np.ascontiguousarray(V[self._dof]).astype(complex))
        out = np.zeros((self.grid.npoints, V.shape[1]), dtype=complex)
        out[self._dof] = sols
        if self.bc == "periodic":
            out[-1] = out[0]
        return out


class RationalFilteredResolvent(LinearOperator):
    """(1/pi) Im sum_j r_j (L_h - lambda + p_j sigma)^(-1) as an operator.

    Acts on real probe functions (the imaginary part is taken entrywise,
    which matches the quadratic form of the self-adjoint filtered
    operator for real inputs). Each application costs K resolvent solves
    with cached factorizations.
    """

    self_adjoint = True

    def __init__(self, schrodinger: SchrodingerOperator, lam: float, sigma: float,
                 poles: np.ndarray, residues: np.ndarray):
        if sigma <= 0:
            raise ValueError("smoothing parameter must be positive")
        self.schrodinger = schrodinger
        self.grid = schrodinger.grid
        self.lam = float(lam)
        self.sigma = float(sigma)
        self.poles = np.asarray(poles, dtype=complex)
        self.residues = np.asarray(residues, dtype=complex)
        if np.any(np.imag(self.poles) <= 0):
            raise ValueError("poles must lie in the upper half-plane")
        self.shifts = self.lam - self.poles * self.sigma
        self.order = len(self.poles)

    def _apply_values(self, V: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(V):
            raise ValueError("filtered resolvent expects real-valued probes")
        acc = np.zeros(V.shape, dtype=complex)
        for r, z in zip(self.residues, self.shifts):
            acc += r * self.schrodinger.resolvent_apply_batch(z, V)
        return np.imag(acc) / np.pi

    def apply(self, u: GridFunction) -> GridFunction:
        if not self.grid.same_as(u.grid):
            raise GridMismatchError("function not on operator grid")
        return GridFunction(self.grid, self._apply_values(u.values[:, None])[:, 0])

    def apply_batch(self, B: Quasimatrix) -> Quasimatrix:
        if not self.grid.same_as(B.grid):
            raise GridMismatchError("quasimatrix not on operator grid")
        return Quasimatrix(self.grid, self._apply_values(B.values))

    def quadratic_form(self, g: GridFunction) -> float:
        return float(self.quadratic_form_batch(Quasimatrix(g.grid, g.values))[0])

    def quadratic_form_batch(self, B: Quasimatrix) -> np.ndarray:
        """(1/pi) Im sum_j r_j <g, (L_h - lambda + p_j sigma)^(-1) g>."""
        if not self.grid.same_as(B.grid):
            raise GridMismatchError("quasimatrix not on operator grid")
        V = B.values
        if np.iscomplexobj(V):
            raise ValueError("filtered resolvent expects real-valued probes")
        w = self.grid.weights
        acc = np.zeros(V.shape[1], dtype=complex)
        for r, z in zip(self.residues, self.shifts):
            sol = self.schrodinger.resolvent_apply_batch(z, V)
            acc += r * np.einsum("ij,ij->j", V * w[:, None], sol)
        return np.imag(acc) / np.pi

    def exact_trace(self, max_dense: int = 3000):
        """Dense-spectrum trace oracle, available on small grids only."""
        if self.schrodinger.n_interior > max_dense:
            return None
        mu = self.schrodinger.eigenvalues()
        u = (self.lam - mu) / self.sigma
        vals = -np.imag(np.sum(self.residues[:, None] / (u[None, :] - self.poles[:, None]), axis=0)) / np.pi
        return float(np.sum(vals) / self.sigma)
