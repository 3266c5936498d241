"""Multi-trial coverage and width experiments.

Two drivers share the same reporting: :func:`run_simulation` draws fresh data
from a :class:`~stratppi.sampling.SyntheticScenario` each trial, and
:func:`run_real_data_sweep` resamples labels from a fully labeled pool.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .core import (
    MIN_STRATUM_SIZE,
    ConfigError,
    InfeasibleAllocationError,
    StratPPIError,
    EstimatorConfig,
    StratifiedDataset,
    StratumData,
    DomainError,
    Stratification,
    z_value,
)
from .estimators import classical_mean_ci, run_estimator
from .sampling import (
    Pool,
    SyntheticScenario,
    generate_scenario_data,
    integer_allocation,
    plan_allocation,
    quantile_stratify,
    substream,
)
from .tuning import heuristic_rho, optimal_rho

log = logging.getLogger(__name__)

METHOD_PRESETS = {
    "classical": ("classical", "proportional"),
    "ppi_pp": ("ppi_pp", "proportional"),
    "stratppi_prop": ("stratppi", "proportional"),
    "stratppi_opt": ("stratppi", "optimal_oracle"),
    "stratppi_heur": ("stratppi", "heuristic"),
}
METHOD_ALIASES = {"ppi++": "ppi_pp", "stratppi-prop": "stratppi_prop",
                  "stratppi-opt": "stratppi_opt", "stratppi-heur": "stratppi_heur"}


def method_config(name: str, alpha: float, lambdas=None, clip_lambda: bool = False) -> EstimatorConfig:
    """Estimator configuration for a named method such as ``stratppi_opt``."""
    key = METHOD_ALIASES.get(name, name)
    if key not in METHOD_PRESETS:
        raise ConfigError(f"unknown method {name!r}; choose from {sorted(METHOD_PRESETS)}")
    method, allocation = METHOD_PRESETS[key]
    return EstimatorConfig(method=method, allocation=allocation, alpha=alpha,
                           lambdas=lambdas, clip_lambda=clip_lambda)


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def percent_reduction(classical_width: float, method_width: float) -> float:
    """Relative interval shrinkage against classical inference, in percent."""
    if not classical_width > 0:
        raise DomainError(f"classical width must be positive, got {classical_width!r}")
    return (classical_width - method_width) / classical_width * 100.0


def effective_sample_size(method_width: float, pool_label_var: float, alpha: float) -> float:
    """Labels classical inference would need to reach ``method_width``.

    Inverts ``width = 2 z sqrt(var / n)``; a zero width maps to ``inf``.
    """
    if method_width < 0 or pool_label_var < 0:
        raise DomainError("width and label variance must be non-negative")
    if method_width == 0:
        return math.inf
    return (2.0 * z_value(alpha) * math.sqrt(pool_label_var) / method_width) ** 2


def paired_sign_test(smaller, larger) -> tuple[int, int, float]:
    """One-sided sign test that ``smaller[i] < larger[i]`` more often than not.

    Returns ``(wins, informative_pairs, p_value)``; ties are discarded.
    """
    a = np.asarray(smaller, dtype=float)
    b = np.asarray(larger, dtype=float)
    wins = int(np.sum(a < b))
    informative = int(np.sum(a != b))
    if informative == 0:
        return 0, 0, 1.0
    p = stats.binomtest(wins, informative, 0.5, alternative="greater").pvalue
    return wins, informative, float(p)


@dataclass(frozen=True, eq=False)
class TrialReport:
    method: str
    n: int
    coverage: float
    mean_width: float
    width_q16: float
    width_q84: float
    percent_reduction_vs_classical: float
    effective_sample_size: float
    trials: int
    alpha: float
    seed: int
    widths: np.ndarray = field(repr=False, default=None)
    covered: np.ndarray = field(repr=False, default=None)
    notes: tuple[str, ...] = ()

    def to_record(self) -> dict:
        """Flat record with the documented output schema."""
        ess = self.effective_sample_size
        return {
            "method": self.method,
            "n": self.n,
            "coverage": self.coverage,
            "mean_width": self.mean_width,
            "width_q16": self.width_q16,
            "width_q84": self.width_q84,
            "percent_reduction": self.percent_reduction_vs_classical,
            "effective_sample_size": "inf" if math.isinf(ess) else ess,
            "trials": self.trials,
            "alpha": self.alpha,
            "seed": self.seed,
        }


def _summarize(name, n, widths, covered, baseline_width, label_var, alpha, seed, notes=()):
    widths = np.asarray(widths, dtype=float)
    covered = np.asarray(covered, dtype=bool)
    mean_width = float(widths.mean())
    return TrialReport(
        method=name,
        n=int(n),
        coverage=float(covered.mean()),
        mean_width=mean_width,
        width_q16=float(np.quantile(widths, 0.16)),
        width_q84=float(np.quantile(widths, 0.84)),
        percent_reduction_vs_classical=percent_reduction(baseline_width, mean_width),
        effective_sample_size=effective_sample_size(mean_width, label_var, alpha),
        trials=int(widths.size),
        alpha=alpha,
        seed=seed,
        widths=widths,
        covered=covered,
        notes=tuple(notes),
    )


def _normalize_methods(methods, alpha) -> list[EstimatorConfig]:
    out = []
    for m in methods:
        if isinstance(m, str):
            m = method_config(m, alpha)
        out.append(m)
    if not out:
        raise ConfigError("at least one method is required")
    return out


# --------------------------------------------------------------------------
# Synthetic simulation
# --------------------------------------------------------------------------

def run_simulation(sc: SyntheticScenario, methods: Iterable[EstimatorConfig | str],
                   n_grid: Sequence[int] | None = None) -> list[TrialReport]:
    """Coverage and width of each method over ``sc.trials`` synthetic trials.

    The classical and PPI++ baselines and proportional StratPPI see the same
    proportionally allocated data in a trial; oracle allocation uses the
    scenario's true per-stratum moments. Every method uses ``sc.alpha``.
    """
    configs = [EstimatorConfig(method=c.method, lambdas=c.lambdas, allocation=c.allocation,
                               alpha=sc.alpha, clip_lambda=c.clip_lambda)
               for c in _normalize_methods(methods, sc.alpha)]
    for c in configs:
        if c.method == "stratppi" and c.allocation == "heuristic":
            raise ConfigError("heuristic allocation needs autorater confidences; "
                              "synthetic scenarios have none")
    n_grid = tuple(n_grid or sc.n_grid)
    w = np.asarray(sc.weights)
    classical = EstimatorConfig(method="classical", alpha=sc.alpha)

    reports = []
    for n in n_grid:
        if n < MIN_STRATUM_SIZE * sc.K:
            raise InfeasibleAllocationError(f"n={n} is below 2K={MIN_STRATUM_SIZE * sc.K}")
        prop_plan = plan_allocation(w, w, n, sc.N)
        plans = []
        for c in configs:
            if c.method == "stratppi" and c.allocation == "optimal_oracle":
                rho, _ = optimal_rho(sc.oracles(c.lambdas_for(sc.K)), w)
                plans.append(plan_allocation(rho, w, n, sc.N))
            else:
                plans.append(prop_plan)

        widths = np.empty((len(configs), sc.trials))
        covered = np.empty((len(configs), sc.trials), dtype=bool)
        base_widths = np.empty(sc.trials)
        for t in range(sc.trials):
            cache: dict[tuple[int, ...], StratifiedDataset] = {}

            def data_for(plan):
                if plan.n_k not in cache:
                    cache[plan.n_k] = generate_scenario_data(sc, n, plan, t)
                return cache[plan.n_k]

            try:
                for i, (c, plan) in enumerate(zip(configs, plans)):
                    res = run_estimator(data_for(plan), c)
                    widths[i, t] = res.width
                    covered[i, t] = res.covers(sc.theta_star)
                base_widths[t] = run_estimator(data_for(prop_plan), classical).width
            except StratPPIError as exc:
                raise type(exc)(f"scenario {sc.name!r}, n={n}, trial {t}: {exc}") from exc

        baseline = float(base_widths.mean())
        for i, c in enumerate(configs):
            reports.append(_summarize(c.name, n, widths[i], covered[i], baseline, 1.0,
                                      sc.alpha, sc.seed))
    return reports


# --------------------------------------------------------------------------
# Resampling sweep over a labeled pool
# --------------------------------------------------------------------------

def _pool_stratification(pool: Pool, K: int) -> tuple[Stratification | None, np.ndarray, np.ndarray]:
    """Stratum index per pool row and stratum masses."""
    if pool.stratum is not None:
        codes, idx = np.unique(pool.stratum, return_inverse=True)
        weights = np.bincount(idx) / idx.size
        return None, idx, weights
    strat = quantile_stratify(pool.prediction, K)
    return strat, strat.assign(pool.prediction), np.asarray(strat.weights)


def heuristic_pool_rho(pool: Pool, idx: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Heuristic labeled-budget fractions from the pool's autorater scores alone."""
    K = weights.size
    if pool.binary:
        scores = pool.scores
        return heuristic_rho([scores[idx == k] for k in range(K)], weights)
    if pool.confidence is None:
        raise ConfigError("heuristic allocation needs a binary pool or a confidence column")
    f = [pool.prediction[idx == k] for k in range(K)]
    conf = [np.column_stack([1 - pool.confidence[idx == k], pool.confidence[idx == k]])
            for k in range(K)]
    return heuristic_rho(f, weights, conf, label_set=(0.0, 1.0), lambda_k=1.0)


def run_real_data_sweep(pool: Pool, K: int = 10, methods: Iterable[EstimatorConfig | str] = (
        "classical", "ppi_pp", "stratppi_prop", "stratppi_heur"),
        n_grid: Sequence[int] = (100, 200, 300, 500, 1000), trials: int = 1000,
        alpha: float = 0.05, seed: int = 0) -> list[TrialReport]:
    """Resample ``n`` labels from a labeled pool and score each method's interval.

    The stratification is fixed once from all pool predictions. Each trial
    draws the labeled sample (simple random for classical and PPI++, stratified
    without replacement for StratPPI); every other row joins the unlabeled
    sample with its label hidden. Coverage is measured against the mean label
    of the pool.
    """
    configs = [EstimatorConfig(method=c.method, lambdas=c.lambdas, allocation=c.allocation,
                               alpha=alpha, clip_lambda=c.clip_lambda)
               for c in _normalize_methods(methods, alpha)]
    if trials < 1:
        raise ConfigError(f"trials must be at least 1, got {trials}")
    labeled_rows = np.flatnonzero(pool.labeled_mask)
    if labeled_rows.size < 2:
        raise ConfigError("pool needs labeled rows")
    theta_star = float(pool.label[labeled_rows].mean())
    label_var = float(np.var(pool.label[labeled_rows]))

    _, idx, weights = _pool_stratification(pool, K)
    Kp = weights.size
    reserve = MIN_STRATUM_SIZE * Kp
    if max(n_grid) + reserve > len(pool) or max(n_grid) > labeled_rows.size:
        raise ConfigError(
            f"pool of {len(pool)} rows ({labeled_rows.size} labeled) is too small for "
            f"n={max(n_grid)} plus {reserve} reserved unlabeled rows"
        )

    rho_by_alloc = {"proportional": weights}
    for c in configs:
        if c.method != "stratppi":
            continue
        if c.allocation == "optimal_oracle":
            raise ConfigError("oracle allocation is unavailable for pool data; use prop or heur")
        if c.allocation == "heuristic" and "heuristic" not in rho_by_alloc:
            rho_by_alloc["heuristic"] = heuristic_pool_rho(pool, idx, weights)

    rows_by_stratum = [np.flatnonzero(idx == k) for k in range(Kp)]
    lab_by_stratum = [r[pool.labeled_mask[r]] for r in rows_by_stratum]
    capacity = np.array([min(lab.size, rows.size - MIN_STRATUM_SIZE)
                         for lab, rows in zip(lab_by_stratum, rows_by_stratum)])
    y_all, f_all = pool.label, pool.prediction
    classical = EstimatorConfig(method="classical", alpha=alpha)

    reports = []
    for n in n_grid:
        allocs, notes = {}, {}
        for key, rho in rho_by_alloc.items():
            n_k = np.array(integer_allocation(rho, n))
            over = n_k > capacity
            note = []
            if np.any(over):
                for k in np.flatnonzero(over):
                    msg = (f"n={n}, {key} allocation: stratum {k} clipped from {n_k[k]} "
                           f"to {capacity[k]} available labeled rows")
                    note.append(msg)
                    warnings.warn(msg, RuntimeWarning, stacklevel=2)
                n_k = np.minimum(n_k, capacity)
            allocs[key], notes[key] = n_k, note

        widths = np.empty((len(configs), trials))
        covered = np.empty((len(configs), trials), dtype=bool)
        base_widths = np.empty(trials)
        for t in range(trials):
            srs = substream(seed, t, 0, "srs_rows").choice(labeled_rows, size=n, replace=False)
            rest = np.ones(len(pool), dtype=bool)
            rest[srs] = False
            base = classical_mean_ci(y_all[srs], alpha)
            base_widths[t] = base.width
            strat_cache = {}
            for i, c in enumerate(configs):
                if c.method == "classical":
                    res = base
                elif c.method == "ppi_pp":
                    data = StratifiedDataset.single(y_all[srs], f_all[srs], f_all[rest],
                                                    binary=pool.binary)
                    res = run_estimator(data, c)
                else:
                    if c.allocation not in strat_cache:
                        strat_cache[c.allocation] = _stratified_draw(
                            pool, allocs[c.allocation], rows_by_stratum, lab_by_stratum,
                            weights, seed, t)
                    res = run_estimator(strat_cache[c.allocation], c)
                widths[i, t] = res.width
                covered[i, t] = res.covers(theta_star)

        baseline = float(base_widths.mean())
        for i, c in enumerate(configs):
            note = notes.get(c.allocation, ()) if c.method == "stratppi" else ()
            reports.append(_summarize(c.name, n, widths[i], covered[i], baseline, label_var,
                                      alpha, seed, note))
    return reports


def _stratified_draw(pool, n_k, rows_by_stratum, lab_by_stratum, weights, seed, trial):
    strata = []
    for k, (rows, lab) in enumerate(zip(rows_by_stratum, lab_by_stratum)):
        chosen = substream(seed, trial, k, "pool_rows").choice(lab, size=int(n_k[k]), replace=False)
        rest = np.setdiff1d(rows, chosen, assume_unique=True)
        strata.append(StratumData(pool.label[chosen], pool.prediction[chosen],
                                  pool.prediction[rest], weights[k]))
    return StratifiedDataset(tuple(strata), binary=pool.binary)
