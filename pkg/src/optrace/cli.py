"""Experiment driver: toy-kernel convergence sweeps, density-of-states
sweeps, field-intensity runs, and the validation suite.

Configuration comes from an optional TOML file with flag overrides (flags
win). Runs are deterministic for a fixed seed; OPTRACE_SEED supplies the
default seed and the --seed flag takes precedence.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import dos as dos_mod
from . import photonics as ph
from . import reporting
from .estimators import cont_hutch_pp, hutchinson
from .gp import ProbeSampler, SECovariance, default_seed
from .operators import BUILTIN_KERNELS, builtin_kernel

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_BAD_CONFIG = 2


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}")


def _merged(config: dict, section: str, **flags) -> dict:
    """Section of the config file with non-None flags overriding."""
    out = dict(config.get(section, {}))
    for key, val in flags.items():
        if val is not None and val != ():
            out[key] = val
    return out


def _pool_map(jobs: int, fn, items):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@click.group()
def main():
    """Randomized trace estimation experiments."""


seed_option = click.option("--seed", type=int, default=None,
                           help="RNG seed (default: OPTRACE_SEED or 0).")
jobs_option = click.option("--jobs", type=int, default=1, show_default=True,
                           help="Worker threads for sweep points.")
out_option = click.option("--out", type=click.Path(path_type=Path),
                          default=Path("runs"), show_default=True,
                          help="Output directory.")
config_option = click.option("--config", type=click.Path(exists=True, path_type=Path),
                             default=None, help="TOML config file.")


@main.command("trace-toy")
@config_option
@seed_option
@jobs_option
@out_option
@click.option("--kernel", "kernels", multiple=True,
              type=click.Choice(sorted(BUILTIN_KERNELS)), help="Kernel(s) to run.")
@click.option("--ell", "ells", multiple=True, type=float, help="Length-scale list.")
@click.option("--m", "ms", multiple=True, type=int, help="Query budgets.")
@click.option("--num-seeds", type=int, default=None, help="Seeds per sweep point.")
@click.option("--grid-n", type=int, default=None, help="Toy-kernel grid nodes.")
def trace_toy(config, seed, jobs, out, kernels, ells, ms, num_seeds, grid_n):
    """Trace-estimator convergence on the built-in toy kernels."""
    cfg = _load_config(config)
    params = _merged(cfg, "trace_toy",
                     kernels=list(kernels) or None, ells=list(ells) or None,
                     ms=list(ms) or None, num_seeds=num_seeds, grid_n=grid_n,
                     seed=seed)
    kernels = params.get("kernels") or sorted(BUILTIN_KERNELS)
    ells = [float(e) for e in params.get("ells") or (0.2, 0.1, 0.05, 0.025)]
    ms = [int(m) for m in params.get("ms") or (30, 60, 120, 240)]
    num_seeds = int(params.get("num_seeds") or 20)
    grid_n = int(params.get("grid_n") or 801)
    base_seed = params.get("seed")
    base_seed = default_seed() if base_seed is None else int(base_seed)
    _validate_positive(ms=ms, num_seeds=[num_seeds], grid_n=[grid_n])
    if any(e <= 0 for e in ells):
        raise click.UsageError("length-scales must be positive")

    out = Path(out)
    reporting.write_run_metadata(out, {
        "subcommand": "trace-toy", "kernels": kernels, "ells": ells, "ms": ms,
        "num_seeds": num_seeds, "grid_n": grid_n,
    }, base_seed)

    ops = {name: builtin_kernel(name, n=grid_n) for name in kernels}

    def run_point(point):
        name, ell, m, s = point
        op = ops[name]
        sampler = ProbeSampler(SECovariance(ell), op.grid, seed=s)
        exact = op.exact_trace()
        rows = []
        h = hutchinson(op, sampler, m)
        rows.append((name, ell, m, s, "hutchinson", h.value, exact,
                     abs(h.value - exact) / abs(exact)))
        if m % 3 == 0:
            hp = cont_hutch_pp(op, sampler, m)
            rows.append((name, ell, m, s, "hutchpp", hp.value, exact,
                         abs(hp.value - exact) / abs(exact)))
        return rows

    points = [(name, ell, m, base_seed + i)
              for name in kernels for ell in ells for m in ms
              for i in range(num_seeds)]
    rows = [r for chunk in _pool_map(jobs, run_point, points) for r in chunk]
    header = ("kernel", "ell", "m", "seed", "method", "estimate", "exact", "rel_error")
    reporting.write_csv(out / "trace_toy.csv", header, rows)

    _toy_figures(out, rows, kernels, ells, ms, ops)
    click.echo(f"wrote {out / 'trace_toy.csv'}")
    sys.exit(EXIT_OK)


def _toy_figures(out, rows, kernels, ells, ms, ops):
    from .estimators import expected_estimate_oracle

    by = {}
    for (name, ell, m, _s, method, _est, _exact, rel) in rows:
        by.setdefault((name, ell, m, method), []).append(rel)
    for name in kernels:
        series = {}
        for ell in ells:
            xs, ys = [], []
            for m in ms:
                key = (name, ell, m, "hutchinson")
                if key in by:
                    xs.append(1 / np.sqrt(m))
                    ys.append(np.mean(by[key]))
            if xs:
                series[f"ell={ell}"] = (xs, ys)
        if series:
            fig = reporting.loglog_figure(series, "1/sqrt(m)",
                                          "mean relative error", name)
            reporting.save_figure(fig, Path(out) / f"error_vs_m_{name}.svg")
    bias_series = {}
    for name in kernels:
        op = ops[name]
        exact = op.exact_trace()
        biases = [abs(expected_estimate_oracle(op, SECovariance(ell)) - exact)
                  / abs(exact) for ell in ells]
        bias_series[name] = (ells, biases)
    fig = reporting.loglog_figure(bias_series, "ell", "relative bias",
                                  "estimator mean bias vs length-scale")
    reporting.save_figure(fig, Path(out) / "bias_vs_ell.svg")


def _validate_positive(**named_lists):
    for name, values in named_lists.items():
        for v in values:
            if v <= 0:
                raise click.UsageError(f"{name} values must be positive (got {v})")


@main.command("dos")
@config_option
@seed_option
@jobs_option
@out_option
@click.option("--L", "Lhalf", type=float, default=None, help="Half-width of the box.")
@click.option("--N", "n_interior", type=int, default=None, help="Interior grid nodes.")
@click.option("--potential", type=click.Choice(["free", "kronig_penney"]), default=None)
@click.option("--bc", type=click.Choice(["dirichlet", "periodic"]), default=None)
@click.option("--lambda", "lambdas", multiple=True, type=float, help="Evaluation energies.")
@click.option("--sigma", "sigmas", multiple=True, type=float, help="Smoothing widths.")
@click.option("--order", "orders", multiple=True, type=int, help="Kernel orders K.")
@click.option("--m", "ms", multiple=True, type=int,
              help="Query budgets (largest drives the smoothing sweep).")
@click.option("--sample-sigma", type=float, default=None,
              help="Fixed smoothing width for the sample-rate sweep.")
@click.option("--ell", type=float, default=None, help="Probe length-scale.")
@click.option("--method", type=click.Choice(["hutchinson", "hutchpp"]), default=None)
def dos_cmd(config, seed, jobs, out, Lhalf, n_interior, potential, bc, lambdas,
            sigmas, orders, ms, sample_sigma, ell, method):
    """Smoothed density-of-states sweeps with trace-estimated resolvents."""
    cfg = _load_config(config)
    params = _merged(cfg, "dos", L=Lhalf, N=n_interior, potential=potential,
                     bc=bc, lambdas=list(lambdas) or None,
                     sigmas=list(sigmas) or None, orders=list(orders) or None,
                     ms=list(ms) or None, sample_sigma=sample_sigma, ell=ell,
                     method=method, seed=seed)
    L = float(params.get("L") or 50.0)
    N = int(params.get("N") or 2000)
    potential = params.get("potential") or "free"
    bc = params.get("bc") or ("periodic" if potential == "kronig_penney" else "dirichlet")
    lambdas = [float(x) for x in params.get("lambdas") or (1.0,)]
    sigmas = [float(s) for s in params.get("sigmas") or (0.8, 0.4, 0.2, 0.1)]
    orders = [int(K) for K in params.get("orders") or (2, 4, 6, 8)]
    ms = sorted(int(x) for x in params.get("ms") or (600,))
    sample_sigma = float(params.get("sample_sigma") or 0.2)
    ell = float(params.get("ell") or 2e-3 * L)
    method = params.get("method") or "hutchpp"
    base_seed = params.get("seed")
    base_seed = default_seed() if base_seed is None else int(base_seed)
    _validate_positive(sigma=sigmas, m=ms, ell=[ell], N=[N], L=[L],
                       sample_sigma=[sample_sigma])
    if method == "hutchpp" and any(m % 3 != 0 for m in ms):
        raise click.UsageError("hutchpp needs m divisible by 3")
    if any(K < 1 or K > dos_mod.MAX_KERNEL_ORDER for K in orders):
        raise click.UsageError(f"kernel orders must lie in 1..{dos_mod.MAX_KERNEL_ORDER}")

    out = Path(out)
    reporting.write_run_metadata(out, {
        "subcommand": "dos", "L": L, "N": N, "potential": potential, "bc": bc,
        "lambdas": lambdas, "sigmas": sigmas, "orders": orders, "ms": ms,
        "sample_sigma": sample_sigma, "ell": ell, "method": method,
    }, base_seed)

    v = None if potential == "free" else dos_mod.square_well_potential()
    from .operators import SchrodingerOperator

    op = SchrodingerOperator(L, potential=v, bc=bc, n_interior=N)
    m_main = ms[-1]

    def run_point(point):
        K, sigma, m = point
        return dos_mod.dos_estimate(L, lambdas, sigma, K, m, ell, method=method,
                                    bc=bc, N=N, seed=base_seed, schrodinger=op)

    smoothing_points = [(K, sigma, m_main) for K in orders for sigma in sigmas]
    sample_points = ([(K, sample_sigma, m) for K in orders for m in ms]
                     if len(ms) > 1 else [])
    results = _pool_map(jobs, run_point, smoothing_points + sample_points)
    rows = [row for res in results for row in res.rows()]
    reporting.write_csv(out / "dos.csv", dos_mod.CSV_HEADER, rows)

    if potential == "free":
        n_smooth = len(smoothing_points)
        _dos_figures(out, results[:n_smooth], results[n_smooth:], orders,
                     lambdas)
    click.echo(f"wrote {out / 'dos.csv'}")
    sys.exit(EXIT_OK)


def _dos_figures(out, smoothing_results, sample_results, orders, lambdas):
    ref = dos_mod.dos_reference_free_particle
    lam0 = lambdas[0]

    def error_at(res):
        i = int(np.argmin(np.abs(res.lambdas - lam0)))
        return abs(res.rho[i] - ref(lam0)) / ref(lam0)

    err_vs_sigma = {}
    for K in orders:
        pts = sorted((res.sigma, error_at(res)) for res in smoothing_results
                     if res.K == K)
        if pts:
            err_vs_sigma[f"K={K}"] = ([p[0] for p in pts], [p[1] for p in pts])
    if err_vs_sigma:
        fig = reporting.loglog_figure(err_vs_sigma, "sigma",
                                      f"relative error at lambda={lam0}",
                                      "smoothing-rate sweep")
        reporting.save_figure(fig, Path(out) / "dos_error_vs_sigma.svg")
    err_vs_m = {}
    for K in orders:
        pts = sorted((res.m // 3, error_at(res)) for res in sample_results
                     if res.K == K)
        if pts:
            err_vs_m[f"K={K}"] = ([p[0] for p in pts], [p[1] for p in pts])
    if err_vs_m:
        fig = reporting.loglog_figure(err_vs_m, "m/3",
                                      f"relative error at lambda={lam0}",
                                      "sample-rate sweep")
        reporting.save_figure(fig, Path(out) / "dos_error_vs_m.svg")
    if len(lambdas) > 1:
        series = {f"K={res.K}, sigma={res.sigma}": (res.lambdas, res.rho)
                  for res in smoothing_results}
        fig = reporting.line_figure(series, "lambda", "rho", "smoothed DOS")
        reporting.save_figure(fig, Path(out) / "dos_curves.svg")


@main.command("photonics")
@config_option
@seed_option
@jobs_option
@out_option
@click.option("--shape", type=click.Choice(ph.SHAPES), default=None)
@click.option("--scale", type=float, default=None, help="Inscribed-disk radius.")
@click.option("--omega", "omegas", multiple=True, type=float, help="Angular frequencies.")
@click.option("--m", "ms", multiple=True, type=int,
              help="Query budgets (largest drives the headline estimate).")
@click.option("--ell", type=float, default=None, help="Probe length-scale.")
@click.option("--grid-n", type=int, default=None, help="Interior grid nodes per direction.")
@click.option("--method", type=click.Choice(["hutchinson", "hutchpp"]), default=None)
@click.option("--spectrum-count", type=int, default=None,
              help="Eigenvalues in the diagnostic spectrum report.")
def photonics_cmd(config, seed, jobs, out, shape, scale, omegas, ms, ell, grid_n,
                  method, spectrum_count):
    """Mean-square field intensity from incoherent sources."""
    cfg = _load_config(config)
    params = _merged(cfg, "photonics", shape=shape, scale=scale,
                     omegas=list(omegas) or None, ms=list(ms) or None, ell=ell,
                     grid_n=grid_n, method=method,
                     spectrum_count=spectrum_count, seed=seed)
    shape_name = params.get("shape") or "disk"
    scale = float(params.get("scale") or 0.5)
    omegas = [float(w) for w in params.get("omegas") or
              (0.5 * np.pi, np.pi, 2 * np.pi)]
    ms = sorted(int(x) for x in params.get("ms") or (300,))
    ell = float(params.get("ell") or 0.08)
    grid_n = int(params.get("grid_n") or 100)
    method = params.get("method") or "hutchpp"
    spectrum_count = int(params.get("spectrum_count") or 200)
    base_seed = params.get("seed")
    base_seed = default_seed() if base_seed is None else int(base_seed)
    _validate_positive(m=ms, ell=[ell], grid_n=[grid_n], scale=[scale],
                       omega=omegas)
    if method == "hutchpp" and any(m % 3 != 0 for m in ms):
        raise click.UsageError("hutchpp needs m divisible by 3")

    out = Path(out)
    reporting.write_run_metadata(out, {
        "subcommand": "photonics", "shape": shape_name, "scale": scale,
        "omegas": omegas, "ms": ms, "ell": ell, "grid_n": grid_n,
        "method": method, "spectrum_count": spectrum_count,
    }, base_seed)

    shape = ph.CrossSection(shape_name, scale=scale)
    m_main = ms[-1]

    rows = []
    for omega in omegas:
        op = ph.FieldIntensityOperator(shape, omega, n_interior=grid_n)
        value, est = ph.mean_field_intensity(shape, omega, m_main, ell,
                                             method=method, seed=base_seed,
                                             operator=op)
        rows.append((shape_name, omega, m_main, ell, base_seed, value))
        _photonics_snapshot(out, op, ell, base_seed, omega)
    reporting.write_csv(out / "photonics.csv",
                        ("shape", "omega", "m", "ell", "seed", "estimate"), rows)

    coarse = min(30, grid_n)
    spec_rows = []
    for omega in omegas:
        ev = ph.spectrum_report(shape, omega, spectrum_count, n_interior=coarse)
        spec_rows.extend((shape_name, omega, i + 1, v) for i, v in enumerate(ev))
    reporting.write_csv(out / "photonics_spectrum.csv",
                        ("shape", "omega", "k", "eigenvalue"), spec_rows)
    series = {}
    for omega in omegas:
        ev = np.array([v for (_s, w, _k, v) in spec_rows if w == omega])
        series[f"omega={omega / np.pi:.2g}pi"] = (np.arange(1, ev.size + 1),
                                                  np.maximum(ev, 1e-300))
    fig = reporting.loglog_figure(series, "k", "eigenvalue",
                                  "intensity-operator spectrum (diagnostic grid)")
    reporting.save_figure(fig, Path(out) / "photonics_spectrum.svg")

    if len(ms) > 1:
        _photonics_sample_sweep(out, shape, shape_name, omegas, ms, ell,
                                method, base_seed, coarse, jobs)
    click.echo(f"wrote {out / 'photonics.csv'}")
    sys.exit(EXIT_OK)


def _photonics_sample_sweep(out, shape, shape_name, omegas, ms, ell, method,
                            seed, coarse, jobs):
    """Relative error vs m/3 against the dense trace at the diagnostic
    resolution."""
    rows = []
    series = {}
    for omega in omegas:
        op = ph.FieldIntensityOperator(shape, omega, n_interior=coarse)
        exact = float(np.real(np.trace(ph.dense_intensity_matrix(op))))

        def run_m(m, op=op, exact=exact, omega=omega):
            value, _ = ph.mean_field_intensity(shape, omega, m, ell,
                                               method=method, seed=seed,
                                               operator=op)
            err = abs(value * op.region_measure - exact) / exact
            return (shape_name, omega, m, err)

        pts = _pool_map(jobs, run_m, ms)
        rows.extend(pts)
        series[f"omega={omega / np.pi:.2g}pi"] = (
            [m // 3 for m in ms], [max(p[3], 1e-300) for p in pts])
    reporting.write_csv(out / "photonics_error_vs_m.csv",
                        ("shape", "omega", "m", "rel_error"), rows)
    fig = reporting.loglog_figure(series, "m/3",
                                  "relative error vs dense trace",
                                  f"sample-rate sweep ({coarse}x{coarse} grid)")
    reporting.save_figure(fig, Path(out) / "photonics_error_vs_m.svg")


def _photonics_snapshot(out, op, ell, seed, omega):
    sampler = ProbeSampler(SECovariance(ell, dim=2), op.grid, seed=seed)
    probe = sampler.sample(1, stream=9)
    E = op.field_batch(probe.values)[:, :, 0]
    intensity = np.abs(E) ** 2
    tag = f"omega_{omega / np.pi:.4g}pi"
    reporting.write_field_snapshot(Path(out) / f"field_{tag}.txt", intensity,
                                   (-1.0, 1.0, -1.0, 1.0))
    fig = reporting.heatmap_figure(intensity, (-1.0, 1.0, -1.0, 1.0),
                                   f"|E_z|^2, {tag}")
    reporting.save_figure(fig, Path(out) / f"field_{tag}.svg")


@main.command("validate")
@config_option
@seed_option
@jobs_option
@out_option
@click.option("--grid-n", type=int, default=None, help="Toy-kernel grid nodes.")
def validate_cmd(config, seed, jobs, out, grid_n):
    """Run the bound-and-inequality check suite and write a JSON report."""
    from . import validation

    cfg = _load_config(config)
    params = _merged(cfg, "validate", grid_n=grid_n, seed=seed)
    grid_n = int(params.get("grid_n") or 801)
    base_seed = params.get("seed")
    base_seed = default_seed() if base_seed is None else int(base_seed)

    out = Path(out)
    reporting.write_run_metadata(out, {"subcommand": "validate",
                                       "grid_n": grid_n}, base_seed)
    reports = validation.run_all(n_grid=grid_n, seed=base_seed, jobs=jobs)
    payload = [r.to_dict() for r in reports]
    (out / "validation.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")
    failures = sum(r.violations for r in reports)
    for r in reports:
        click.echo(f"{'PASS' if r.passed else 'FAIL'} {r.name} "
                   f"(violations={r.violations}, worst_margin={r.worst_margin:.3e})")
    sys.exit(EXIT_OK if failures == 0 else EXIT_VALIDATION_FAILED)


if __name__ == "__main__":
    main()
