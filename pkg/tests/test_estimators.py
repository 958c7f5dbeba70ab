import numpy as np
import pytest

from optrace.estimators import (
    cont_hutch_pp,
    ell_bound,
    expected_estimate_oracle,
    gamma_k,
    hutchinson,
    hutchinson_m_bound,
    hutchinson_m_bound_gaussian_vectors,
    hutchpp_parameters,
    range_finder,
    tail_constant,
)
from optrace.gp import ProbeSampler, SECovariance, covariance_eigenvalues, covariance_matrix
from optrace.grids import Grid1D
from optrace.operators import KernelIntegralOperator, builtin_kernel


def sampler_for(op, ell, seed=0):
    return ProbeSampler(SECovariance(ell), op.grid, seed=seed)


def test_hutchinson_zero_operator():
    g = Grid1D.uniform(-1, 1, 101)
    op = KernelIntegralOperator(g, lambda x, y: np.zeros_like(x * y))
    est = hutchinson(op, sampler_for(op, 0.1), 7)
    assert est.value == 0.0
    assert est.num_matvecs == 7


def test_hutchinson_rank_one_bias_oracle():
    g = Grid1D.uniform(-1, 1, 301)
    op = KernelIntegralOperator(g, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    cov = SECovariance(0.1)
    oracle = expected_estimate_oracle(op, cov)
    sampler = ProbeSampler(cov, op.grid, seed=3)
    G = sampler.sample(2000)
    forms = np.asarray(op.quadratic_form_batch(G))
    se = forms.std(ddof=1) / np.sqrt(forms.size)
    assert abs(forms.mean() - oracle) < 4 * se


@pytest.mark.parametrize("name", ["sinc_mixture", "helmholtz_like"])
def test_unbiasedness_within_monte_carlo_error(name):
    op = builtin_kernel(name, n=601)
    for ell in (0.2, 0.1, 0.05, 0.025):
        cov = SECovariance(ell)
        oracle = expected_estimate_oracle(op, cov)
        sampler = ProbeSampler(cov, op.grid, seed=17)
        G = sampler.sample(2000)
        forms = np.asarray(op.quadratic_form_batch(G))
        se = forms.std(ddof=1) / np.sqrt(forms.size)
        assert abs(forms.mean() - oracle) < 4 * se


def test_oracle_symmetric_in_kernel_arguments():
    g = Grid1D.uniform(-1, 1, 201)
    f = lambda x, y: np.exp(-((x - 0.2) ** 2) - (y + 0.1) ** 2)
    op = KernelIntegralOperator(g, f)
    op_t = KernelIntegralOperator(g, lambda x, y: f(y, x))
    cov = SECovariance(0.1)
    assert expected_estimate_oracle(op, cov) == pytest.approx(
        expected_estimate_oracle(op_t, cov), rel=1e-12)


def test_oracle_constant_kernel_mass():
    g = Grid1D.uniform(-1, 1, 801)
    c = 0.7
    op = KernelIntegralOperator(g, lambda x, y: np.full_like(x * y, c))
    val = expected_estimate_oracle(op, SECovariance(0.01))
    assert val == pytest.approx(c * 2.0, rel=2e-2)


def test_oracle_bias_first_order_in_ell():
    # constant kernel: the bias is a pure boundary effect, exactly O(ell)
    g = Grid1D.uniform(-1, 1, 1601)
    op = KernelIntegralOperator(g, lambda x, y: np.ones_like(x * y))
    tr = op.exact_trace()
    ells = np.array([0.04, 0.02, 0.01, 0.005])
    biases = [abs(expected_estimate_oracle(op, SECovariance(e)) - tr) for e in ells]
    slope = np.polyfit(np.log(ells), np.log(biases), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.15)
    # Lipschitz mixture: decays at least first order over the same range
    op2 = builtin_kernel("sinc_mixture", n=1601)
    tr2 = op2.exact_trace()
    b2 = [abs(expected_estimate_oracle(op2, SECovariance(e)) - tr2) for e in ells]
    slope2 = np.polyfit(np.log(ells), np.log(b2), 1)[0]
    assert slope2 >= 0.9


def _hs_residual(op, Q):
    sw = np.sqrt(op.grid.weights)
    F = op.weighted_matrix()
    Qw = sw[:, None] * Q.values
    resid = F - Qw @ (Qw.T @ F)
    return np.linalg.norm(resid) / np.linalg.norm(F)


def test_range_finder_rank_one_capture():
    g = Grid1D.uniform(-1, 1, 301)
    op = KernelIntegralOperator(g, lambda x, y: np.exp(x) * np.exp(y))
    Q = range_finder(op, sampler_for(op, 0.1), 1)
    assert _hs_residual(op, Q) <= 1e-8


def test_range_finder_exact_rank_capture():
    g = Grid1D.uniform(-1, 1, 301)
    r = 4
    basis = np.column_stack([np.cos(k * np.pi * g.nodes) for k in range(r)])

    def kern(x, y):
        out = np.zeros_like(x * y)
        for k in range(r):
            out += np.cos(k * np.pi * x) * np.cos(k * np.pi * y)
        return out

    op = KernelIntegralOperator(g, kern)
    hits = 0
    for seed in range(100):
        Q = range_finder(op, sampler_for(op, 0.1, seed=seed), r + 5)
        if _hs_residual(op, Q) <= 1e-6:
            hits += 1
    assert hits >= 99


def test_range_finder_tracks_svd_tail():
    op = builtin_kernel("helmholtz_like", n=401)
    sv = op.singular_values()
    tail = np.sqrt(np.cumsum(sv[::-1] ** 2))[::-1]
    total = np.linalg.norm(sv)
    resids = []
    for budget in (2, 4, 8, 16):
        Q = range_finder(op, sampler_for(op, 0.05, seed=1), budget)
        resids.append(_hs_residual(op, Q))
    assert all(resids[i + 1] <= resids[i] * 1.5 for i in range(len(resids) - 1))
    for budget, res in zip((2, 4, 8, 16), resids):
        assert res <= 50 * tail[min(budget, len(tail) - 1)] / total + 1e-12


def test_cont_hutch_pp_low_rank_exactness():
    g = Grid1D.uniform(-1, 1, 301)
    m = 30
    r = m // 3 - 5

    def kern(x, y):
        out = np.zeros_like(x * y)
        for k in range(r):
            out += np.cos(k * np.pi * x) * np.cos(k * np.pi * y)
        return out

    op = KernelIntegralOperator(g, kern)
    est = cont_hutch_pp(op, sampler_for(op, 0.1, seed=2), m)
    assert est.value == pytest.approx(op.exact_trace(), rel=1e-6)


def test_cont_hutch_pp_zero_operator():
    g = Grid1D.uniform(-1, 1, 101)
    op = KernelIntegralOperator(g, lambda x, y: np.zeros_like(x * y))
    est = cont_hutch_pp(op, sampler_for(op, 0.1), 9)
    assert est.value == 0.0


def test_cont_hutch_pp_budget_accounting():
    op = builtin_kernel("helmholtz_like", n=301)
    est = cont_hutch_pp(op, sampler_for(op, 0.2, seed=1), 12)
    assert est.num_matvecs == 12
    assert est.method == "hutchpp"


def test_cont_hutch_pp_rejects_bad_budget():
    op = builtin_kernel("helmholtz_like", n=101)
    with pytest.raises(ValueError):
        cont_hutch_pp(op, sampler_for(op, 0.2), 10)


def test_variance_reduction_on_builtin_kernels():
    # compact version of the full acceptance sweep
    for name in ("sinc_mixture", "helmholtz_like"):
        op = builtin_kernel(name, n=601)
        tr = op.exact_trace()
        err_h, err_pp = [], []
        for seed in range(20):
            sampler = sampler_for(op, 0.05, seed=seed)
            err_h.append(abs(hutchinson(op, sampler, 60).value - tr) / abs(tr))
            err_pp.append(abs(cont_hutch_pp(op, sampler, 60).value - tr) / abs(tr))
        assert np.mean(err_pp) <= np.mean(err_h)


# --- bound formulas


def test_m_bound_quadratic_growth():
    # quadratic scaling up to ceiling slack
    for eps in (0.5, 0.1, 0.02):
        m1 = hutchinson_m_bound(eps, 0.05, 0.9)
        m2 = hutchinson_m_bound(eps / 2, 0.05, 0.9)
        assert m2 >= 4 * m1 - 3


def test_m_bound_log_delta_scaling():
    eps, K_op = 0.1, 0.9
    m1 = hutchinson_m_bound(eps, 0.1, K_op)
    m2 = hutchinson_m_bound(eps, 0.01, K_op)
    assert m2 / m1 == pytest.approx(np.log(5400) / np.log(540), rel=1e-3)


def test_discrete_gaussian_bound_value():
    assert hutchinson_m_bound_gaussian_vectors(0.1, 0.1) == 5992


def test_tail_constant_regimes():
    assert tail_constant(1.0) == 54**2 * 8**4
    assert tail_constant(1e9) == 64.0


def test_ell_bound_formula():
    eps, f_inf, width, d = 0.1, 1.75, 2.0, 1e-3
    first = d / (2 * np.sqrt(2 * np.log(8 * f_inf * width / eps)))
    second = 5 * eps / (52 * f_inf)
    assert ell_bound(eps, f_inf, width, d) == pytest.approx(min(first, second))


def test_hutchpp_parameters():
    grid = Grid1D.uniform(-1, 1, 401)
    lam = covariance_eigenvalues(SECovariance(0.05), grid)
    plan = hutchpp_parameters(0.1, 0.25, 1.0, lam, gamma_k=0.9)
    assert plan.p == 5  # max(5, ceil(log2(16)))
    assert plan.t == 2.0
    assert plan.s == 2.0
    assert plan.eta >= 1.0
    assert plan.m >= 1
    assert plan.C == tail_constant(lam[0])


def test_hutchpp_eig_ratio_refinement_stable():
    lam1 = covariance_eigenvalues(SECovariance(0.05), Grid1D.uniform(-1, 1, 400))
    lam2 = covariance_eigenvalues(SECovariance(0.05), Grid1D.uniform(-1, 1, 800))
    r1 = lam1.sum() / lam1[0]
    r2 = lam2.sum() / lam2[0]
    assert abs(r1 - r2) / r2 < 0.01


def test_gamma_k_aligned_top_eigenfunction():
    grid = Grid1D.uniform(-1, 1, 201)
    cov = SECovariance(0.3)
    K = covariance_matrix(cov, grid)
    sw = np.sqrt(grid.weights)
    B = sw[:, None] * K * sw[None, :]
    w_, V = np.linalg.eigh(B)
    top = V[:, -1] / sw  # top covariance eigenfunction in node values
    op = KernelIntegralOperator(grid, lambda x, y:
                                np.interp(x, grid.nodes, top) * np.interp(y, grid.nodes, top))
    assert gamma_k(op, cov, 1) == pytest.approx(1.0, abs=1e-6)


def test_hutchpp_parameters_fills_ell_bound():
    grid = Grid1D.uniform(-1, 1, 401)
    lam = covariance_eigenvalues(SECovariance(0.05), grid)
    plan = hutchpp_parameters(0.1, 0.1, 1.0, lam, gamma_k=0.8,
                              f_inf=1.75, width=2.0, alpha=20.0)
    assert plan.ell is not None and plan.ell > 0
    assert plan.d is not None and plan.d > 0
    eps_eff = 0.1 * np.sqrt(plan.k) / plan.eta
    assert plan.ell == pytest.approx(
        ell_bound(eps_eff, 1.75, 2.0, eps_eff / (4 * 2.0 * 20.0)))


def test_gamma_k_singular_compression_reported():
    op = builtin_kernel("sinc_mixture", n=201)
    # probes this smooth cannot excite a ten-dimensional singular subspace
    with pytest.raises(ValueError):
        gamma_k(op, SECovariance(5.0), 10)


def test_hutchpp_parameters_rejects_bad_gamma():
    grid = Grid1D.uniform(-1, 1, 201)
    lam = covariance_eigenvalues(SECovariance(0.1), grid)
    with pytest.raises(ValueError):
        hutchpp_parameters(0.1, 0.1, 1.0, lam, gamma_k=0.0)


def test_gamma_k_at_most_one():
    op = builtin_kernel("sinc_mixture", n=401)
    cov = SECovariance(0.1)
    for k in (1, 2, 5, 10):
        assert gamma_k(op, cov, k) <= 1.0 + 1e-8


def test_gamma_k_rotation_invariance():
    op = builtin_kernel("sinc_mixture", n=301)
    cov = SECovariance(0.1)
    k = 4
    A = op.weighted_matrix()
    _, _, vt = np.linalg.svd(A)
    V = vt[:k].T
    sw = np.sqrt(op.grid.weights)
    K = covariance_matrix(cov, op.grid)
    B = sw[:, None] * K * sw[None, :]
    lam1 = np.linalg.eigvalsh(B)[-1]
    rng = np.random.default_rng(0)
    Qrot, _ = np.linalg.qr(rng.standard_normal((k, k)))
    base = k / (lam1 * np.trace(np.linalg.inv(V.T @ B @ V)))
    rot = k / (lam1 * np.trace(np.linalg.inv((V @ Qrot).T @ B @ (V @ Qrot))))
    assert rot == pytest.approx(base, abs=1e-10)
    assert gamma_k(op, cov, k) == pytest.approx(base, rel=1e-10)


def test_monte_carlo_rate_compact():
    # quick version of the full acceptance sweep: slope ~ -1/2 before bias
    op = builtin_kernel("helmholtz_like", n=601)
    tr = op.exact_trace()
    ms = (10, 40, 160)
    errs = []
    for m in ms:
        vals = []
        for seed in range(40):
            sampler = sampler_for(op, 0.025, seed=seed)
            G = sampler.sample(m)
            forms = np.asarray(op.quadratic_form_batch(G))
            vals.append(abs(forms.mean() - tr))
        errs.append(np.mean(vals))
    slope = np.polyfit(np.log(ms), np.log(errs), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.2)
