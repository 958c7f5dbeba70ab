"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria run at their stated tolerances; parameters the criteria leave
open (grid resolution, oracle-test energies) are fixed here and recorded
in the printed detail. Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import numpy as np
import pytest
from click.testing import CliRunner

from optrace.cli import main as cli_main
from optrace.dos import dense_smoothed_dos, dos_estimate, rational_kernel
from optrace.estimators import (
    cont_hutch_pp_with_probes,
    expected_estimate_oracle,
    hutchinson_with_probes,
)
from optrace.gp import ProbeSampler, SECovariance
from optrace.operators import RationalFilteredResolvent, SchrodingerOperator, builtin_kernel
from optrace.photonics import CrossSection, dense_intensity_matrix, \
    mean_field_intensity, spectrum_report
from optrace.validation import run_all

TOY_GRID_N = 801  # resolves ell = 0.025 and the fastest sinc oscillation


def report(num, ok, detail):
    print(f"\nACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


def test_criterion_01_exact_trace_recovery():
    # sinc mixture trace 3.5; hutchinson ell=0.025, m=1e4, 100-seed mean
    # within 2 percent
    op = builtin_kernel("sinc_mixture", n=TOY_GRID_N)
    trace = op.exact_trace()
    assert trace == pytest.approx(3.5, rel=1e-12)
    m, n_seeds = 10_000, 100
    means = np.empty(n_seeds)
    for seed in range(n_seeds):
        sampler = ProbeSampler(SECovariance(0.025), op.grid, seed=seed)
        forms = np.asarray(op.quadratic_form_batch(sampler.sample(m)))
        means[seed] = forms.mean()
    grand = means.mean()
    rel = abs(grand - 3.5) / 3.5
    report(1, rel <= 0.02,
           f"mean estimate {grand:.4f} vs 3.5, relative deviation {rel:.2%} "
           f"(tolerance 2%); the estimator mean is the kernel-smoothed "
           f"quadrature, whose bias at ell=0.025 exceeds the stated tolerance")


def test_criterion_02_bias_vs_ell_ordering():
    ells = (0.2, 0.1, 0.05, 0.025)
    biases = {}
    for name in ("sinc_mixture", "helmholtz_like"):
        op = builtin_kernel(name, n=TOY_GRID_N)
        tr = op.exact_trace()
        biases[name] = [abs(expected_estimate_oracle(op, SECovariance(e)) - tr)
                        for e in ells]
    dec = all(bool((np.diff(b) < 0).all()) for b in biases.values())
    below = all(h < s for h, s in zip(biases["helmholtz_like"],
                                      biases["sinc_mixture"]))
    detail = (f"sinc biases {['%.3f' % b for b in biases['sinc_mixture']]}, "
              f"helmholtz {['%.3f' % b for b in biases['helmholtz_like']]}")
    report(2, dec and below, f"strictly decreasing={dec}, ordering={below}; {detail}")


def test_criterion_03_monte_carlo_rate():
    op = builtin_kernel("helmholtz_like", n=TOY_GRID_N)
    tr = op.exact_trace()
    ms = np.array([10, 30, 100, 300, 1000])
    n_seeds = 200
    abs_err = np.zeros((n_seeds, ms.size))
    for seed in range(n_seeds):
        sampler = ProbeSampler(SECovariance(0.025), op.grid, seed=seed)
        forms = np.asarray(op.quadratic_form_batch(sampler.sample(int(ms[-1]))))
        csum = np.cumsum(forms)
        for i, m in enumerate(ms):
            abs_err[seed, i] = abs(csum[m - 1] / m - tr)
    mean_err = abs_err.mean(axis=0)
    slope = np.polyfit(np.log(ms), np.log(mean_err), 1)[0]
    report(3, abs(slope + 0.5) <= 0.15,
           f"log-log slope {slope:.3f} (required -0.5 +- 0.15); "
           f"mean errors {['%.4f' % e for e in mean_err]}")


def test_criterion_04_hutchpp_dominance():
    ms = (30, 60, 120, 240)
    n_seeds = 100
    ok_dominance = True
    details = []
    reach_target = False
    for name in ("sinc_mixture", "helmholtz_like"):
        op = builtin_kernel(name, n=TOY_GRID_N)
        tr = op.exact_trace()
        for m in ms:
            e_h = np.empty(n_seeds)
            e_pp = np.empty(n_seeds)
            for seed in range(n_seeds):
                sampler = ProbeSampler(SECovariance(0.05), op.grid, seed=seed)
                G_h = sampler.sample(m, stream=0)
                e_h[seed] = abs(hutchinson_with_probes(op, G_h) - tr) / abs(tr)
                S = sampler.sample(m // 3, stream=1)
                G = sampler.sample(m // 3, stream=2)
                v, _ = cont_hutch_pp_with_probes(op, S, G)
                e_pp[seed] = abs(v - tr) / abs(tr)
            if e_pp.mean() > e_h.mean():
                ok_dominance = False
            details.append(f"{name} m={m}: pp={e_pp.mean():.2e} h={e_h.mean():.2e}")
            if name == "helmholtz_like" and m <= 300 and e_pp.mean() <= 1e-3:
                reach_target = True
    report(4, ok_dominance and reach_target,
           f"dominance at every m={ok_dominance}, helmholtz reaches 1e-3 "
           f"by m<=300: {reach_target}; " + "; ".join(details))


def test_criterion_05_check_suite():
    reports = run_all(n_grid=TOY_GRID_N, seed=0)
    total = sum(r.violations for r in reports)
    detail = ", ".join(f"{r.name}={r.violations}" for r in reports)
    report(5, total == 0, f"violations: {detail}")


def test_criterion_06_dos_smoothing_order():
    L, N, lam, m = 50.0, 2000, 1.0, 600
    sigmas = np.array([0.8, 0.4, 0.2, 0.1])
    ref = 1.0 / (2 * np.pi)
    slopes = {}
    errs_at = {}
    for K in (2, 4):
        errs = []
        for sigma in sigmas:
            res = dos_estimate(L, [lam], float(sigma), K, m, ell=0.1,
                               method="hutchpp", N=N, seed=0)
            errs.append(abs(res.rho[0] - ref) / ref)
        slopes[K] = np.polyfit(np.log(sigmas), np.log(errs), 1)[0]
        errs_at[K] = dict(zip(sigmas, errs))
    ordering = errs_at[4][0.2] < errs_at[2][0.2]
    ok = (abs(slopes[2] - 2) <= 0.5) and (abs(slopes[4] - 4) <= 0.5) and ordering
    report(6, ok,
           f"slope K=2: {slopes[2]:.2f} (need 2 +- 0.5), K=4: {slopes[4]:.2f} "
           f"(need 4 +- 0.5), K=4 below K=2 at sigma=0.2: {ordering}; the "
           f"sigma range straddles the spectral-edge regime at lambda=1, "
           f"which caps the observable order")


def test_criterion_07_dos_dense_oracle():
    # N pinned at 60 by the criterion; remaining parameters chosen for a
    # grid-resolved probe scale: L=4, lambda=0.5, sigma=0.5, K=2, ell=0.2
    L, N, lam, sigma, ell, m = 4.0, 60, 0.5, 0.5, 0.2, 2000
    op = SchrodingerOperator(L, bc="dirichlet", n_interior=N)
    kern = rational_kernel(2)
    exact = dense_smoothed_dos(op, kern, [lam], sigma)[0]
    filt = RationalFilteredResolvent(op, lam, sigma, kern.poles, kern.residues)
    sampler = ProbeSampler(SECovariance(ell), op.grid, seed=0)
    forms = filt.quadratic_form_batch(sampler.sample(m, stream=0))
    est = forms.mean() / (2 * L)
    se = forms.std(ddof=1) / np.sqrt(m) / (2 * L)
    ratio = abs(est - exact) / se
    report(7, ratio <= 3.0,
           f"dense {exact:.5f}, hutchinson {est:.5f}, |diff| = {ratio:.2f} "
           f"standard errors (need <= 3)")


def test_criterion_08_photonics_headline():
    value, est = mean_field_intensity(CrossSection("disk", scale=0.5), np.pi,
                                      300, 0.08, method="hutchpp", seed=0,
                                      n_interior=100)
    in_interval = 0.0055 <= value <= 0.0083
    ratios = []
    for omega in (0.5 * np.pi, np.pi, 2 * np.pi):
        ev = spectrum_report(CrossSection("disk", scale=0.5), omega, 60,
                             n_interior=24)
        ratios.append(float(ev[49] / ev[0]))
    flat = ratios[0] < ratios[1] < ratios[2]
    report(8, in_interval and flat,
           f"<Ez> = {value:.5f} in [0.0055, 0.0083]: {in_interval}; "
           f"lambda50/lambda1 across omega: "
           + ", ".join(f"{r:.2e}" for r in ratios)
           + f" increasing: {flat}")


def test_criterion_09_photonics_dense_oracle():
    op_kwargs = dict(n_interior=30)
    from optrace.photonics import FieldIntensityOperator

    op = FieldIntensityOperator(CrossSection("disk", scale=0.5), np.pi, **op_kwargs)
    tr = float(np.real(np.trace(dense_intensity_matrix(op))))
    m = 900
    sampler = ProbeSampler(SECovariance(0.08, dim=2), op.grid, seed=0)
    S = sampler.sample(m // 3, stream=1)
    G = sampler.sample(m // 3, stream=2)
    Y = op.apply_batch(S)
    from optrace.grids import project_complement, qr

    Q, _ = qr(Y)
    captured = float(np.sum(np.real(op.quadratic_form_batch(Q))))
    G_perp = project_complement(Q, G)
    resid_forms = np.real(np.asarray(op.quadratic_form_batch(G_perp)))
    est = captured + resid_forms.mean()
    se = resid_forms.std(ddof=1) / np.sqrt(resid_forms.size)
    diff = abs(est - tr)
    ok = diff <= 3 * se + 1e-10 * tr
    report(9, ok,
           f"dense trace {tr:.6g}, estimate {est:.6g}, |diff| = {diff:.2e} "
           f"vs 3 SE = {3 * se:.2e} (+1e-10 numerical floor)")


def test_criterion_10_determinism(tmp_path):
    runner = CliRunner()
    cases = [
        (["trace-toy", "--seed", "11", "--kernel", "sinc_mixture",
          "--ell", "0.1", "--m", "12", "--num-seeds", "2", "--grid-n", "201"],
         "trace_toy.csv"),
        (["dos", "--seed", "11", "--L", "10", "--N", "150", "--lambda", "1.0",
          "--sigma", "0.4", "--order", "2", "--m", "18", "--ell", "0.06"],
         "dos.csv"),
        (["photonics", "--seed", "11", "--shape", "disk", "--omega", "3.0",
          "--m", "6", "--ell", "0.12", "--grid-n", "16",
          "--spectrum-count", "5"],
         "photonics.csv"),
    ]
    identical = []
    for args, fname in cases:
        paths = []
        for tag in ("a", "b"):
            out = tmp_path / f"{fname}.{tag}"
            res = runner.invoke(cli_main, args + ["--out", str(out)])
            assert res.exit_code == 0, res.output
            paths.append((out / fname).read_bytes())
        identical.append(paths[0] == paths[1])
    report(10, all(identical),
           "byte-identical reruns: " + ", ".join(
               f"{c[1]}={ok}" for c, ok in zip(cases, identical)))
