"""Empirical verification of the estimator's tail bounds and the
supporting operator inequalities, at desk scale.

Every check compares against an oracle computed independently of the
estimator code paths (dense SVD / eigendecompositions, high-resolution
quadrature) and emits a machine-readable report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    ell_bound,
    expected_estimate_oracle,
    lipschitz_continuity_radius,
    tail_constant,
)
from .gp import ProbeSampler, SECovariance, kernel_op_norm
from .grids import Grid1D
from .operators import KernelIntegralOperator


class NonPsdError(ValueError):
    """Input kernel is not positive semidefinite within tolerance."""


@dataclass
class CheckReport:
    name: str
    trials: int
    violations: int
    worst_margin: float
    parameters: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "passed": self.passed,
            "parameters": self.parameters,
        }


def _psd_spectrum(op: KernelIntegralOperator) -> np.ndarray:
    """Descending spectrum; rejects kernels that are not PSD."""
    A = op.weighted_matrix()
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))[::-1]
    if ev[-1] < -1e-8 * max(ev[0], 1e-300):
        raise NonPsdError(
            f"kernel has eigenvalue {ev[-1]:.3e} (largest {ev[0]:.3e}); "
            "the check requires a PSD input"
        )
    return np.clip(ev, 0.0, None)


def check_rank_k_bound(op: KernelIntegralOperator, k_max: int) -> CheckReport:
    """Tail of the singular values against trace / sqrt(k)."""
    ev = _psd_spectrum(op)
    tr = op.exact_trace()
    tails = np.sqrt(np.cumsum(ev[::-1] ** 2)[::-1])
    violations = 0
    worst = -np.inf
    for k in range(1, k_max + 1):
        lhs = tails[k] if k < ev.size else 0.0
        rhs = tr / np.sqrt(k) + 1e-8
        worst = max(worst, lhs - rhs)
        if lhs > rhs:
            violations += 1
    return CheckReport("rank_k_bound", trials=k_max, violations=violations,
                       worst_margin=worst,
                       parameters={"kernel": op.name, "trace": tr})


def _weighted_op_norm(values: np.ndarray, grid: Grid1D) -> float:
    sw = np.sqrt(grid.weights)
    A = sw[:, None] * values * sw[None, :]
    return float(np.linalg.svd(A, compute_uv=False)[0])


def check_trace_composition(K_values: np.ndarray, V_values: np.ndarray,
                            grid: Grid1D) -> CheckReport:
    """Trace of the composed kernel against trace(V) * opnorm(K)."""
    for vals, label in ((K_values, "K"), (V_values, "V")):
        sw = np.sqrt(grid.weights)
        ev = np.linalg.eigvalsh(sw[:, None] * 0.5 * (vals + vals.T) * sw[None, :])
        if ev[0] < -1e-8 * max(ev[-1], 1e-300):
            raise NonPsdError(f"{label} kernel is not PSD")
    w = grid.weights
    W = K_values @ (w[:, None] * V_values)
    tr_w = float(np.sum(w * np.diag(W)))
    tr_v = float(np.sum(w * np.diag(V_values)))
    bound = tr_v * _weighted_op_norm(K_values, grid) + 1e-8
    margin = tr_w - bound
    return CheckReport("trace_composition", trials=1,
                       violations=int(tr_w > bound), worst_margin=margin,
                       parameters={"trace_W": tr_w, "bound": bound})


def check_trace_composition_random(grid: Grid1D, n_pairs: int, seed: int = 0,
                                   rank: int = 12) -> CheckReport:
    """Randomized search for violations over random PSD kernel pairs."""
    rng = np.random.default_rng(seed)
    n = grid.npoints
    violations = 0
    worst = -np.inf
    for _ in range(n_pairs):
        BK = rng.standard_normal((n, rank))
        BV = rng.standard_normal((n, rank))
        rep = check_trace_composition(BK @ BK.T, BV @ BV.T, grid)
        violations += rep.violations
        worst = max(worst, rep.worst_margin)
    return CheckReport("trace_composition_random", trials=n_pairs,
                       violations=violations, worst_margin=worst,
                       parameters={"rank": rank, "seed": seed})


def check_lipschitz_h(op: KernelIntegralOperator, trials: int,
                      ell: float = 0.05, seed: int = 0) -> CheckReport:
    """|h(g1) - h(g2)| against twice the operator norm times ||g1 - g2||,
    where h(g) is the L2 norm of 2 * (F g)."""
    f_op = float(np.linalg.svd(op.weighted_matrix(), compute_uv=False)[0])
    sampler = ProbeSampler(SECovariance(ell), op.grid, seed=seed)
    G1 = sampler.sample(trials, stream=11)
    G2 = sampler.sample(trials, stream=12)
    w = op.grid.weights
    FG1 = op.apply_batch(G1).values
    FG2 = op.apply_batch(G2).values
    h1 = 2.0 * np.sqrt(np.einsum("ij,ij->j", w[:, None] * FG1, FG1))
    h2 = 2.0 * np.sqrt(np.einsum("ij,ij->j", w[:, None] * FG2, FG2))
    diff = G1.values - G2.values
    dist = np.sqrt(np.einsum("ij,ij->j", w[:, None] * diff, diff))
    lhs = np.abs(h1 - h2)
    rhs = 2.0 * f_op * dist * (1.0 + 1e-6)
    margins = lhs - rhs
    return CheckReport("lipschitz_h", trials=trials,
                       violations=int(np.sum(margins > 0)),
                       worst_margin=float(np.max(margins)),
                       parameters={"kernel": op.name, "f_op": f_op, "ell": ell})


def check_hanson_wright_tail(op: KernelIntegralOperator, ell: float,
                             trials: int, t_multipliers=None,
                             seed: int = 0) -> CheckReport:
    """Empirical tail of the probe quadratic form against the proven bound.

    The mean is the analytic quadrature oracle rather than a sample mean,
    so Monte-Carlo error enters only through the empirical frequencies.
    """
    _psd_spectrum(op)
    cov = SECovariance(ell)
    K_op = kernel_op_norm(cov, op.grid)
    C = tail_constant(K_op)
    f_l2 = op.hs_norm()
    f_op = float(np.linalg.svd(op.weighted_matrix(), compute_uv=False)[0])
    mean = expected_estimate_oracle(op, cov)

    sampler = ProbeSampler(cov, op.grid, seed=seed)
    G = sampler.sample(trials, stream=21)
    forms = np.asarray(op.quadratic_form_batch(G), dtype=float)
    std = float(np.std(forms))
    if t_multipliers is None:
        t_multipliers = np.geomspace(0.1, 10.0, 13)
    violations = 0
    worst = -np.inf
    rows = []
    c_empirical = 0.0
    for mult in np.asarray(t_multipliers, dtype=float):
        t = mult * std
        bound = 27.0 * np.exp(-min(t**2 / (f_l2**2 * K_op), t / f_op) / C)
        bound = min(bound, 1.0)
        freq = float(np.mean(np.abs(forms - mean) >= t))
        se = np.sqrt(max(bound * (1 - bound), 1e-12) / trials)
        margin = freq - (bound + 3 * se)
        worst = max(worst, margin)
        if margin > 0:
            violations += 1
        if 0 < freq < 1:
            c_empirical = max(
                c_empirical,
                min(t**2 / (f_l2**2 * K_op), t / f_op) / np.log(27.0 / freq),
            )
        rows.append({"t": t, "bound": bound, "frequency": freq})
    return CheckReport("hanson_wright_tail", trials=trials, violations=violations,
                       worst_margin=worst,
                       parameters={"kernel": op.name, "ell": ell, "C": C,
                                   "C_empirical": c_empirical, "mean": mean,
                                   "std": std, "sweep": rows})


def fine_expected_estimate(kernel, a: float, b: float, ell: float,
                           nodes_per_ell: int = 5, band_ells: float = 10.0) -> float:
    """Banded high-resolution quadrature of f(x, y) K(x, y).

    Builds its own fine trapezoid grid (independent of any operator grid)
    and only evaluates within the covariance bandwidth, so length-scales
    far below the operator grid spacing stay tractable.
    """
    h_target = ell / nodes_per_ell
    n = max(2001, int(np.ceil((b - a) / h_target)) + 1)
    grid = Grid1D.uniform(a, b, n)
    x = grid.nodes
    w = grid.weights
    h = grid.spacing
    band = max(1, int(np.ceil(band_ells * ell / h)))
    s = ell * np.sqrt(2 * np.pi)
    total = 0.0
    chunk = max(1, int(2e6 / (2 * band + 1)))
    offsets = np.arange(-band, band + 1)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        xi = x[start:stop][:, None]
        raw = np.arange(start, stop)[:, None] + offsets[None, :]
        mask = (raw >= 0) & (raw < n)
        jj = np.clip(raw, 0, n - 1)
        yj = x[jj]
        kv = np.exp(-((xi - yj) ** 2) / (2 * ell**2)) / s
        fv = kernel(xi, yj)
        total += np.sum(w[start:stop][:, None] * fv * kv * w[jj] * mask)
    return float(total)


def fine_trace(kernel, a: float, b: float, n: int = 100001) -> float:
    """High-resolution quadrature of the kernel diagonal."""
    grid = Grid1D.uniform(a, b, n)
    return float(np.sum(grid.weights * kernel(grid.nodes, grid.nodes)))


def numerical_lipschitz(kernel, a: float, b: float, n: int = 2001) -> float:
    """Doubled finite-difference estimate of the second-argument Lipschitz
    constant."""
    grid = Grid1D.uniform(a, b, n)
    x = grid.nodes
    F = kernel(x[:, None], x[None, :])
    dF = np.abs(np.diff(F, axis=1)) / grid.spacing
    return 2.0 * float(np.max(dF))


def check_expectation_bound(op: KernelIntegralOperator, eps: float,
                            lipschitz_alpha: float | None = None) -> CheckReport:
    """Mean-bias bound: with ell below the closed-form threshold, the
    estimator's expectation sits within eps of the trace."""
    a, b = op.grid.a, op.grid.b
    alpha = lipschitz_alpha if lipschitz_alpha is not None else \
        numerical_lipschitz(op.kernel, a, b)
    f_inf = float(np.max(np.abs(op.matrix)))
    d = lipschitz_continuity_radius(eps, b - a, alpha)
    ell = 0.999 * ell_bound(eps, f_inf, b - a, d)
    expected = fine_expected_estimate(op.kernel, a, b, ell)
    trace = fine_trace(op.kernel, a, b)
    bias = abs(expected - trace)
    margin = bias - eps
    return CheckReport("expectation_bound", trials=1,
                       violations=int(bias >= eps), worst_margin=margin,
                       parameters={"kernel": op.name, "eps": eps, "ell": ell,
                                   "alpha": alpha, "bias": bias})


def run_all(n_grid: int = 801, seed: int = 0, jobs: int = 1) -> list[CheckReport]:
    """The full desk-scale suite used by the validate subcommand."""
    from .operators import builtin_kernel

    sinc = builtin_kernel("sinc_mixture", n=n_grid)
    helm = builtin_kernel("helmholtz_like", n=n_grid)
    small = Grid1D.uniform(-1.0, 1.0, 201)
    checks = [
        lambda: check_rank_k_bound(sinc, k_max=50),
        lambda: check_trace_composition_random(small, n_pairs=200, seed=seed),
        lambda: check_lipschitz_h(helm, trials=1000, seed=seed),
        lambda: check_hanson_wright_tail(sinc, ell=0.05, trials=5000, seed=seed),
        lambda: check_expectation_bound(sinc, eps=0.1),
    ]
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda fn: fn(), checks))
    return [fn() for fn in checks]
