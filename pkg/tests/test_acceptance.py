"""Acceptance checks, one verdict line per criterion.

Each test records ``criterion N: PASS|FAIL | detail`` before asserting; the
lines are repeated in the pytest terminal summary.
"""

import hashlib
import math
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from conftest import record_verdict
from stratppi.core import EstimatorConfig, StratifiedDataset, StratumData, z_value
from stratppi.estimators import (
    DiscreteStratum,
    classical_mean_ci,
    pool_strata,
    ppi_asymptotic_variance,
    ppi_pp_ci,
    stratified_asymptotic_variance,
    stratppi_ci,
)
from stratppi.sampling import make_heterogeneous_binary_pool, scenario
from stratppi.simulation import paired_sign_test, run_real_data_sweep, run_simulation
from stratppi.tuning import StratumOracle, heuristic_sigma, heuristic_sigma_binary, optimal_rho, \
    tune_lambda_mean

FOUR_METHODS = ["classical", "ppi_pp", "stratppi_prop", "stratppi_opt"]


def by_method(reports, n):
    return {r.method: r for r in reports if r.n == n}


# --------------------------------------------------------------------------
# 1. Coverage validity
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def homogeneous_reports():
    return run_simulation(scenario("homogeneous"), FOUR_METHODS, n_grid=(100, 500))


def test_criterion_1_coverage(homogeneous_reports):
    trials, nominal = 1000, 0.9
    half = 3 * math.sqrt(nominal * (1 - nominal) / trials)
    cells = [(r.method, r.n, r.coverage) for r in homogeneous_reports]
    outside = [c for c in cells if not 0.88 <= c[2] <= 0.92]
    outside_3s = [c for c in cells if abs(c[2] - nominal) > half]
    table = ", ".join(f"{m}@{n}={c:.3f}" for m, n, c in cells)
    detail = (f"band [0.88, 0.92]: {len(cells) - len(outside)}/{len(cells)} inside; "
              f"exact 3-sigma band [{nominal - half:.4f}, {nominal + half:.4f}]: "
              f"{len(cells) - len(outside_3s)}/{len(cells)} inside; {table}")
    record_verdict("criterion 1", not outside, detail)
    assert not outside, detail


# --------------------------------------------------------------------------
# 2 and 3. Width separation under heterogeneous bias and noise
# --------------------------------------------------------------------------

def test_criterion_2_bias_separation():
    rep = by_method(run_simulation(scenario("bias"), ["ppi_pp", "stratppi_prop"], n_grid=(500,)), 500)
    prop, ppi = rep["stratppi-prop"], rep["ppi++"]
    wins, informative, p = paired_sign_test(prop.widths, ppi.widths)
    passed = prop.mean_width < ppi.mean_width and p < 0.01
    detail = (f"mean width stratppi-prop={prop.mean_width:.4f} vs ppi++={ppi.mean_width:.4f}; "
              f"sign test {wins}/{informative}, p={p:.3g}")
    record_verdict("criterion 2", passed, detail)
    assert passed, detail


def test_criterion_3_optimal_allocation():
    rep = by_method(run_simulation(scenario("noise"), ["stratppi_prop", "stratppi_opt"], n_grid=(500,)), 500)
    opt, prop = rep["stratppi-opt"], rep["stratppi-prop"]
    wins, informative, p = paired_sign_test(opt.widths, prop.widths)
    passed = opt.mean_width < prop.mean_width and p < 0.01
    detail = (f"mean width stratppi-opt={opt.mean_width:.4f} vs stratppi-prop={prop.mean_width:.4f}; "
              f"sign test {wins}/{informative}, p={p:.3g}")
    record_verdict("criterion 3", passed, detail)
    assert passed, detail


# --------------------------------------------------------------------------
# 4. Variance dominance, with exact rational enumeration as the oracle
# --------------------------------------------------------------------------

R = Fraction(1, 10)


def exact_var(atoms, lam):
    """Exact Var(f) and Var(Y - lam f) for atoms (y, f, p)."""
    mf = sum(p * f for y, f, p in atoms)
    mr = sum(p * (y - lam * f) for y, f, p in atoms)
    return (sum(p * (f - mf) ** 2 for y, f, p in atoms),
            sum(p * (y - lam * f - mr) ** 2 for y, f, p in atoms))


def rational_population(rng, equal_means=False):
    K = int(rng.integers(2, 7))
    raw_w = [Fraction(int(v)) for v in rng.integers(1, 10, K)]
    pop = []
    for wk in raw_w:
        m = int(rng.integers(1, 6))
        raw_p = [Fraction(int(v)) for v in rng.integers(1, 10, m)]
        atoms = [(Fraction(int(rng.integers(-20, 21)), 4), Fraction(int(rng.integers(-20, 21)), 4),
                  p / sum(raw_p)) for p in raw_p]
        if equal_means:
            my = sum(p * y for y, f, p in atoms)
            mf = sum(p * f for y, f, p in atoms)
            atoms = [(y - my + Fraction(3, 2), f - mf - Fraction(1, 3), p) for y, f, p in atoms]
        pop.append((wk / sum(raw_w), atoms))
    return pop


def dominance_case(pop, lam):
    lam_q = Fraction(lam)
    strat_exact = sum(wk * (R * lam_q ** 2 * exact_var(a, lam_q)[0] + exact_var(a, lam_q)[1])
                      for wk, a in pop)
    pooled = [(y, f, wk * p) for wk, a in pop for y, f, p in a]
    vf, vr = exact_var(pooled, lam_q)
    ppi_exact = R * lam_q ** 2 * vf + vr
    disc = [DiscreteStratum([float(y) for y, _, _ in a], [float(f) for _, f, _ in a],
                            [float(p) for _, _, p in a], float(wk)) for wk, a in pop]
    strat = stratified_asymptotic_variance(disc, lam, float(R))
    ppi = ppi_asymptotic_variance(pool_strata(disc), lam, float(R))
    return strat, ppi, strat_exact, ppi_exact


def test_criterion_4_variance_dominance():
    rng = np.random.default_rng(2024)
    violations, mismatches, worst_gap = 0, 0, 0.0
    for _ in range(100):
        pop = rational_population(rng)
        for lam in (0.0, 0.5, 1.0):
            strat, ppi, se, pe = dominance_case(pop, lam)
            violations += (strat > ppi + 1e-12) or (se > pe)
            mismatches += abs(strat - float(se)) > 1e-12 or abs(ppi - float(pe)) > 1e-12
    for _ in range(20):
        pop = rational_population(rng, equal_means=True)
        for lam in (0.0, 0.5, 1.0):
            strat, ppi, se, pe = dominance_case(pop, lam)
            worst_gap = max(worst_gap, abs(strat - ppi))
            violations += se != pe
    passed = violations == 0 and mismatches == 0 and worst_gap <= 1e-12
    detail = (f"300 random cases + 60 equal-mean cases; violations={violations}, "
              f"float-vs-exact mismatches={mismatches}, max equal-mean gap={worst_gap:.2e}")
    record_verdict("criterion 4", passed, detail)
    assert passed, detail


# --------------------------------------------------------------------------
# 5. Tuning matches brute-force grids
# --------------------------------------------------------------------------

LAMBDA_GRID = np.round(np.arange(-3000, 3001) * 1e-3, 3)


def random_stratum(rng):
    n, N = int(rng.integers(5, 300)), int(rng.integers(5, 3000))
    b = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
    s = rng.uniform(0.1, 2.0)
    y = rng.normal(rng.normal(), 1, n)
    return StratumData(y, b * y + rng.normal(0, s, n), b * rng.normal(0, 1, N) + rng.normal(0, s, N), 1.0)


def grid_lambda(s):
    resid = s.y[None, :] - LAMBDA_GRID[:, None] * s.f[None, :]
    plug_in = LAMBDA_GRID ** 2 * np.var(s.f_unlabeled) / s.N + resid.var(axis=1) / s.n
    return LAMBDA_GRID[np.argmin(plug_in)]


def grid_rho(w, sig, step=1e-3):
    w2s2 = (np.asarray(w) * np.asarray(sig)) ** 2
    ticks = np.arange(1, round(1 / step)) * step
    if len(w) == 2:
        rho = np.column_stack([ticks, 1 - ticks])
    else:
        a, b = (v.ravel() for v in np.meshgrid(ticks, ticks, indexing="ij"))
        keep = a + b < 1 - step / 2
        rho = np.column_stack([a[keep], b[keep], 1 - a[keep] - b[keep]])
    return rho[np.argmin((w2s2 / rho).sum(axis=1))]


def test_criterion_5_tuning_oracles():
    rng = np.random.default_rng(5)
    lam_err = max(abs(tune_lambda_mean(s) - grid_lambda(s)) for s in (random_stratum(rng) for _ in range(50)))
    rho_err = 0.0
    for K in (2, 3):
        for _ in range(10):
            w = rng.dirichlet(np.ones(K))
            w[-1] = 1 - w[:-1].sum()
            sig = rng.uniform(0.1, 3.0, K)
            rho, _ = optimal_rho([StratumOracle(x, 1.0) for x in sig], w)
            rho_err = max(rho_err, float(np.max(np.abs(rho - grid_rho(w, sig)))))
    passed = lam_err <= 2e-3 and rho_err <= 2e-3
    detail = f"max |lambda - grid| over 50 strata={lam_err:.2e}; max |rho - grid| (K=2,3)={rho_err:.2e}"
    record_verdict("criterion 5", passed, detail)
    assert passed, detail


# --------------------------------------------------------------------------
# 6. One stratum collapses to PPI++ and, at lambda = 0, to classical inference
# --------------------------------------------------------------------------

def direct_ppi(y, f, fu, lam, alpha):
    """Independent PPI++ mean interval for a given lambda."""
    theta = lam * fu.mean() + (y - lam * f).mean()
    var = lam ** 2 * fu.var() / fu.size + (y - lam * f).var() / y.size
    half = z_value(alpha) * math.sqrt(var)
    return theta, var, theta - half, theta + half


def test_criterion_6_single_stratum_collapse():
    rng = np.random.default_rng(6)
    worst_ppi = worst_classical = 0.0
    for _ in range(100):
        n, N = int(rng.integers(2, 200)), int(rng.integers(2, 2000))
        y = rng.normal(rng.normal(), rng.uniform(0.5, 2), n)
        f = rng.uniform(-1, 2) * y + rng.normal(0, rng.uniform(0.1, 2), n)
        fu = rng.normal(0, 1, N)
        alpha = float(rng.uniform(0.01, 0.3))
        cfg = EstimatorConfig(alpha=alpha)
        strat = stratppi_ci(StratifiedDataset.single(y, f, fu), cfg)
        ppi = ppi_pp_ci((y, f), fu, cfg)
        ref = direct_ppi(y, f, fu, ppi.per_stratum[0].lambda_hat, alpha)
        for got in (strat, ppi):
            vals = (got.theta_hat, got.variance, got.lower, got.upper)
            worst_ppi = max(worst_ppi, max(abs(a - b) for a, b in zip(vals, ref)))
        zero = stratppi_ci(StratifiedDataset.single(y, f, fu), EstimatorConfig(alpha=alpha, lambdas=0.0))
        cl = classical_mean_ci(y, alpha)
        worst_classical = max(worst_classical, *(abs(getattr(zero, a) - getattr(cl, a))
                                                 for a in ("theta_hat", "variance", "lower", "upper")))
    passed = worst_ppi <= 1e-12 and worst_classical <= 1e-12
    detail = f"100 datasets; max gap to PPI++={worst_ppi:.2e}; max gap at lambda=0 to classical={worst_classical:.2e}"
    record_verdict("criterion 6", passed, detail)
    assert passed, detail


# --------------------------------------------------------------------------
# 7. Binary shortcut for the heuristic sigma
# --------------------------------------------------------------------------

def test_criterion_7_binary_heuristic_identity():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        f = rng.uniform(size=int(rng.integers(2, 100)))
        table = np.column_stack([1 - f, f])
        worst = max(worst, abs(heuristic_sigma_binary(f) - heuristic_sigma(f, table, (0, 1), lambda_k=0.0)))
    passed = worst <= 1e-12
    detail = (f"1000 vectors, general formula evaluated at lambda=0 (the weighting under which the "
              f"shortcut is exact); max gap={worst:.2e}")
    record_verdict("criterion 7", passed, detail)
    assert passed, detail


# --------------------------------------------------------------------------
# 8. Heterogeneous binary fixture stands in for the real-data study
# --------------------------------------------------------------------------

def test_criterion_8_binary_fixture():
    fx = make_heterogeneous_binary_pool()
    ratio = fx.residual_variance.max() / fx.residual_variance.min()
    reports = run_real_data_sweep(fx.pool, K=10, n_grid=(300,), trials=1000, alpha=0.05, seed=0)
    rep = by_method(reports, 300)
    ppi, prop, heur = rep["ppi++"], rep["stratppi-prop"], rep["stratppi-heur"]
    a = prop.mean_width < ppi.mean_width
    b = heur.mean_width <= prop.mean_width
    c = heur.effective_sample_size >= 1.3 * 300
    passed = ratio >= 4 and a and b and c
    detail = (f"Var(Y-f) decile ratio={ratio:.1f}; widths ppi++={ppi.mean_width:.4f}, "
              f"prop={prop.mean_width:.4f}, heur={heur.mean_width:.4f} (a={a}, b={b}); "
              f"heur ESS={heur.effective_sample_size:.0f} vs 390 (c={c}); "
              f"coverage " + ", ".join(f"{r.method}={r.coverage:.3f}" for r in rep.values()))
    record_verdict("criterion 8", passed, detail)
    assert passed, detail


# --------------------------------------------------------------------------
# 9. Command-line determinism
# --------------------------------------------------------------------------

def run_cli(args, out):
    proc = subprocess.run([sys.executable, "-m", "stratppi", *args, "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return hashlib.sha256(out.read_bytes()).hexdigest()


def test_criterion_9_cli_determinism(tmp_path):
    pool = tmp_path / "pool.csv"
    assert subprocess.run([sys.executable, "-m", "stratppi", "make-fixture", "--size", "4000",
                           "--out", str(pool)]).returncode == 0
    invocations = {
        "simulate-jsonl": ["simulate", "--scenario", "noise", "--trials", "100", "--seed", "11"],
        "simulate-csv": ["simulate", "--scenario", "bias", "--trials", "50", "--n", "100", "--n", "300",
                         "--format", "csv"],
        "sweep-jsonl": ["sweep", "--pool", str(pool), "--binary", "--trials", "50", "--n", "200",
                        "--seed", "3"],
    }
    same = {}
    for name, args in invocations.items():
        h1 = run_cli(args, tmp_path / f"{name}-1.out")
        h2 = run_cli(args, tmp_path / f"{name}-2.out")
        same[name] = h1 == h2
    passed = all(same.values())
    detail = "byte-identical repeats: " + ", ".join(f"{k}={v}" for k, v in same.items())
    record_verdict("criterion 9", passed, detail)
    assert passed, detail
