"""Randomized trace estimators driven by operator-function products.

Provides the GP-probe quadratic-form estimator, the randomized range
finder over quasimatrices, the range-finder/residual split estimator with
a query budget divided in thirds, and the closed-form parameter bounds
that size those budgets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gp import ProbeSampler, SECovariance, covariance_matrix
from .grids import Quasimatrix, project_complement, qr
from .operators import KernelIntegralOperator, LinearOperator

# Probe streams: plain Hutchinson draws from stream 0; the split estimator
# uses independent streams for range probes and residual probes.
STREAM_HUTCH = 0
STREAM_RANGE = 1
STREAM_RESIDUAL = 2

_IMAG_TOL = 1e-8


@dataclass(frozen=True)
class TraceEstimate:
    value: float
    num_matvecs: int
    m: int
    ell: float
    seed: int
    method: str


@dataclass
class ParameterPlan:
    """All tunables and derived constants of the error bounds."""

    eps: float
    delta: float
    m: int
    ell: Optional[float]
    k: int
    p: int
    t: float
    s: float
    c: float
    C: float
    eta: float
    gamma_k: float
    d: Optional[float] = None
    f_inf: Optional[float] = None
    f_l2: Optional[float] = None
    f_op: Optional[float] = None
    K_op: Optional[float] = None

    def __post_init__(self):
        if not (0 < self.delta < 1):
            raise ValueError("delta must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def _real_part(values: np.ndarray, what: str) -> np.ndarray:
    if not np.iscomplexobj(values):
        return values
    scale = max(float(np.max(np.abs(values.real))), 1e-300)
    if np.max(np.abs(values.imag)) > _IMAG_TOL * scale:
        raise ValueError(
            f"{what} produced a non-negligible imaginary part; "
            "a self-adjoint operator was expected"
        )
    return values.real


def hutchinson_with_probes(op: LinearOperator, G: Quasimatrix) -> float:
    """Mean of the quadratic forms of the probe columns."""
    forms = _real_part(np.asarray(op.quadratic_form_batch(G)), "quadratic form")
    return float(np.mean(forms))


def hutchinson(op: LinearOperator, sampler: ProbeSampler, m: int,
               stream: int = STREAM_HUTCH) -> TraceEstimate:
    """Average of m probe quadratic forms <g_i, F g_i>."""
    if m < 1:
        raise ValueError("need m >= 1 probes")
    G = sampler.sample(m, stream=stream)
    value = hutchinson_with_probes(op, G)
    return TraceEstimate(value=value, num_matvecs=m, m=m,
                         ell=sampler.covariance.ell, seed=sampler.seed,
                         method="hutchinson")


def expected_estimate_oracle(op: KernelIntegralOperator, cov: SECovariance) -> float:
    """Expectation of the probe estimator: quadrature of f(x,y) K(x,y).

    Independent of any sampling; this is the estimator's mean including
    the covariance-induced bias.
    """
    K = covariance_matrix(cov, op.grid)
    w = op.grid.weights
    return float(w @ (op.matrix * K) @ w)


def range_finder(op: LinearOperator, sampler: ProbeSampler,
                 rank_plus_oversampling: int, stream: int = STREAM_RANGE) -> Quasimatrix:
    """Orthonormal quasimatrix approximating the operator's range.

    Applies the operator to GP probe columns and orthonormalizes under
    the weighted inner product. Numerically dependent directions are
    dropped, so the result may have fewer columns than requested.
    """
    if rank_plus_oversampling < 1:
        raise ValueError("need at least one probe column")
    S = sampler.sample(rank_plus_oversampling, stream=stream)
    Y = op.apply_batch(S)
    Q, _ = qr(Y)
    return Q


def cont_hutch_pp_with_probes(op: LinearOperator, S: Quasimatrix,
                              G: Quasimatrix) -> tuple[float, int]:
    """Split estimate from given range probes S and residual probes G.

    Returns (value, number of operator applications consumed).
    """
    Y = op.apply_batch(S)
    if np.max(np.abs(Y.values)) == 0.0:
        # operator annihilated every range probe: nothing to capture
        captured_total = 0.0
        n_captured = 0
        G_perp = G
    else:
        Q, _ = qr(Y)
        captured = _real_part(np.asarray(op.quadratic_form_batch(Q)), "captured trace")
        captured_total = float(np.sum(captured))
        n_captured = Q.ncols
        G_perp = project_complement(Q, G)
    residual = _real_part(np.asarray(op.quadratic_form_batch(G_perp)), "residual form")
    value = captured_total + float(np.mean(residual))
    return value, S.ncols + n_captured + G.ncols


def cont_hutch_pp(op: LinearOperator, sampler: ProbeSampler, m: int) -> TraceEstimate:
    """Range-finder/residual split estimator with the budget in thirds.

    m/3 applications build the range basis, m/3 evaluate the captured
    trace exactly, and m/3 estimate the projected residual.
    """
    if m < 3 or m % 3 != 0:
        raise ValueError("query budget m must be a positive multiple of 3")
    third = m // 3
    S = sampler.sample(third, stream=STREAM_RANGE)
    G = sampler.sample(third, stream=STREAM_RESIDUAL)
    value, used = cont_hutch_pp_with_probes(op, S, G)
    return TraceEstimate(value=value, num_matvecs=used, m=m,
                         ell=sampler.covariance.ell, seed=sampler.seed,
                         method="hutchpp")


# ---------------------------------------------------------------------------
# Bound formulas


def tail_constant(K_op: float) -> float:
    """Constant in the quadratic-form tail bound."""
    return max(64.0, 54.0**2 * 8.0**4 / K_op)


def hutchinson_m_bound(eps: float, delta: float, K_op: float) -> int:
    """Probe count guaranteeing the additive-error tail bound."""
    _check_eps_delta(eps, delta)
    C = tail_constant(K_op)
    m = math.log(54.0 / delta) * max(16.0 * C * K_op / eps**2,
                                     1.0 / (4.0 * C * K_op))
    return math.ceil(m)


def hutchinson_m_bound_gaussian_vectors(eps: float, delta: float) -> int:
    """Discrete Gaussian-probe reference bound (m strictly greater)."""
    _check_eps_delta(eps, delta)
    return int(math.floor(20.0 * math.log(2.0 / delta) / eps**2)) + 1


def ell_bound(eps: float, f_inf: float, width: float, d: float) -> float:
    """Length-scale upper bound controlling the estimator's mean bias."""
    if min(eps, f_inf, width, d) <= 0:
        raise ValueError("all arguments must be positive")
    first = d / (2.0 * math.sqrt(2.0 * math.log(8.0 * f_inf * width / eps)))
    second = 5.0 * eps / (52.0 * f_inf)
    return min(first, second)


def lipschitz_continuity_radius(eps: float, width: float, alpha: float) -> float:
    """Radius d(eps) for an alpha-Lipschitz kernel in its second argument."""
    if min(eps, width, alpha) <= 0:
        raise ValueError("all arguments must be positive")
    return eps / (4.0 * width * alpha)


def _check_eps_delta(eps, delta):
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")


def hutchpp_parameters(eps: float, delta: float, c: float,
                       kernel_eigenvalues: np.ndarray, gamma_k: float,
                       f_inf: Optional[float] = None, width: Optional[float] = None,
                       alpha: Optional[float] = None) -> ParameterPlan:
    """Fill the full parameter bundle of the split-estimator bound.

    ``kernel_eigenvalues`` are the weighted covariance eigenvalues
    (descending); their head ratio sum feeds the range-finder inflation
    factor eta. The ell bound is filled when the kernel data (f_inf,
    width, alpha) is supplied.
    """
    _check_eps_delta(eps, delta)
    if gamma_k <= 0:
        raise ValueError("gamma_k must be positive")
    lam = np.asarray(kernel_eigenvalues, dtype=float)
    lam = lam[lam > 0]
    if lam.size == 0:
        raise ValueError("need at least one positive covariance eigenvalue")
    K_op = float(lam[0])
    eig_ratio_sum = float(np.sum(lam) / lam[0])

    k = max(1, math.ceil(c * math.sqrt(math.log(108.0 / delta)) / eps))
    log2_4d = math.log2(4.0 / delta)
    p = max(5, math.ceil(log2_4d))
    t = 2.0
    s = max(2.0, math.sqrt(log2_4d))
    eta = math.sqrt(1.0 + 4.0 * s**2 * (3.0 / gamma_k)
                    * (k * (k + p) / (p + 1.0)) * eig_ratio_sum)
    C = tail_constant(K_op)
    m = math.ceil(math.sqrt(math.log(108.0 / delta))
                  * max(16.0 * C * eta**2 * K_op / (c * eps),
                        1.0 / (4.0 * C * K_op)))

    ell = None
    d = None
    if f_inf is not None and width is not None and alpha is not None:
        eps_eff = eps * math.sqrt(k) / eta
        d = lipschitz_continuity_radius(eps_eff, width, alpha)
        ell = ell_bound(eps_eff, f_inf, width, d)

    return ParameterPlan(eps=eps, delta=delta, m=m, ell=ell, k=k, p=p, t=t,
                         s=s, c=c, C=C, eta=eta, gamma_k=gamma_k, d=d,
                         f_inf=f_inf, K_op=K_op)


def gamma_k(op: KernelIntegralOperator, cov: SECovariance, k: int) -> float:
    """Alignment factor between the operator's top singular subspace and
    the probe covariance.

    Built from the first k right singular vectors of the weighted
    operator and the covariance compressed onto them.
    """
    if k < 1:
        raise ValueError("need k >= 1")
    A = op.weighted_matrix()
    if A.shape[0] > 4000:
        raise ValueError("grid too large for the dense SVD oracle")
    _, _, vt = np.linalg.svd(A)
    V = vt[:k].T
    sw = np.sqrt(op.grid.weights)
    K = covariance_matrix(cov, op.grid)
    B = sw[:, None] * K * sw[None, :]
    K_tilde = V.T @ B @ V
    lam1 = float(np.linalg.eigvalsh(B)[-1])
    cond = np.linalg.cond(K_tilde)
    if not np.isfinite(cond) or cond > 1e14:
        raise ValueError(
            "compressed covariance is numerically singular: the probe "
            "kernel is too smooth to excite the top-k singular subspace"
        )
    trace_inv = float(np.trace(np.linalg.inv(K_tilde)))
    return k / (lam1 * trace_inv)
