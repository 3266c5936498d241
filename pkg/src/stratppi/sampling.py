"""Stratification, integer budget allocation and synthetic data generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    MIN_STRATUM_SIZE,
    ConfigError,
    DataError,
    InfeasibleAllocationError,
    StratifiedDataset,
    Stratification,
    StratumData,
    check_weights,
)
from .tuning import AllocationPlan, StratumOracle

# Substream purposes; the integer codes are part of the reproducibility
# contract and must not be renumbered.
PURPOSES = {
    "labeled_y": 0,
    "labeled_noise": 1,
    "unlabeled_y": 2,
    "unlabeled_noise": 3,
    "pool_rows": 4,
    "srs_rows": 5,
    "fixture": 6,
}


def substream(seed: int, trial: int, stratum: int, purpose: str) -> np.random.Generator:
    """Independent Philox stream keyed by ``(seed, trial, stratum, purpose)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(trial), int(stratum), PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------
# Stratification
# --------------------------------------------------------------------------

def _cell_counts(boundaries: np.ndarray, x: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(boundaries, x, side="right")
    return np.bincount(idx, minlength=boundaries.size + 1)


def quantile_stratify(predictions, K: int) -> Stratification:
    """Cut the prediction axis at the ``j/K`` empirical quantiles.

    Tied quantiles are merged and cells left empty are dropped, so the
    returned stratification may have fewer than ``K`` cells. Weights are the
    exact cell masses of ``predictions``.
    """
    x = np.asarray(predictions, dtype=float).ravel()
    if x.size == 0:
        raise DataError("cannot stratify an empty set of predictions")
    if not np.all(np.isfinite(x)):
        raise DataError("predictions contain non-finite values")
    if int(K) < 1:
        raise ConfigError(f"K must be at least 1, got {K}")

    b = np.unique(np.quantile(x, np.arange(1, int(K)) / int(K)))
    b = b[b > x.min()]
    counts = _cell_counts(b, x)
    while np.any(counts == 0):
        # An empty cell k lies between boundaries k-1 and k; drop the upper
        # one (or the last boundary for the final cell).
        k = int(np.flatnonzero(counts == 0)[0])
        b = np.delete(b, min(k, b.size - 1))
        counts = _cell_counts(b, x)
    weights = counts / x.size
    return Stratification(tuple(b.tolist()), tuple(weights.tolist()))


# --------------------------------------------------------------------------
# Allocation
# --------------------------------------------------------------------------

def integer_allocation(rho, n: int, minimum: int = MIN_STRATUM_SIZE) -> list[int]:
    """Round ``rho * n`` to integers summing to ``n`` with every entry >= ``minimum``.

    Largest-remainder rounding, then strata under the minimum are lifted one
    unit at a time from the currently largest stratum.
    """
    r = np.asarray(rho, dtype=float)
    K = r.size
    n = int(n)
    if n < minimum * K:
        raise InfeasibleAllocationError(
            f"budget n={n} cannot give {K} strata at least {minimum} each"
        )
    raw = r * n
    alloc = np.floor(raw).astype(int)
    shortfall = n - int(alloc.sum())
    order = np.argsort(-(raw - alloc), kind="stable")
    for i in range(shortfall):
        alloc[order[i % K]] += 1
    while alloc.min() < minimum:
        alloc[int(np.argmax(alloc))] -= 1
        alloc[int(np.argmin(alloc))] += 1
    return alloc.tolist()


def plan_allocation(rho, rho_tilde, n: int, N: int) -> AllocationPlan:
    rho = check_weights(rho, "rho")
    rho_tilde = check_weights(rho_tilde, "rho_tilde")
    return AllocationPlan(
        rho=tuple(rho.tolist()),
        rho_tilde=tuple(rho_tilde.tolist()),
        n_k=tuple(integer_allocation(rho, n)),
        N_k=tuple(integer_allocation(rho_tilde, N)),
    )


# --------------------------------------------------------------------------
# Synthetic scenarios
# --------------------------------------------------------------------------

DEFAULT_N_GRID = (100, 200, 300, 500, 1000)


@dataclass(frozen=True)
class SyntheticScenario:
    """Stratified Gaussian model ``Y ~ N(0, 1)``, ``f = Y + mu_k + sigma_k * eps``.

    The target mean is 0 by construction.
    """

    weights: tuple[float, ...] = (0.5, 0.5)
    mu: tuple[float, ...] = (2.0, 2.0)
    sigma: tuple[float, ...] = (1.0, 1.0)
    N: int = 10_000
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    alpha: float = 0.1
    trials: int = 1000
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        K = len(self.weights)
        if len(self.mu) != K or len(self.sigma) != K:
            raise ConfigError(f"weights, mu and sigma must all have length K={K}")
        try:
            check_weights(self.weights)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if any(s < 0 or not math.isfinite(s) for s in self.sigma):
            raise ConfigError("sigma entries must be finite and non-negative")
        if any(not math.isfinite(m) for m in self.mu):
            raise ConfigError("mu entries must be finite")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a non-negative 64-bit integer")
        bad = [n for n in self.n_grid if n < MIN_STRATUM_SIZE * K]
        if bad:
            raise ConfigError(f"n_grid entries {bad} are below 2K={MIN_STRATUM_SIZE * K}")
        if self.N < MIN_STRATUM_SIZE * K:
            raise ConfigError(f"N={self.N} is below 2K={MIN_STRATUM_SIZE * K}")

    @property
    def K(self) -> int:
        return len(self.weights)

    theta_star = 0.0

    def oracle_lambdas(self) -> np.ndarray:
        """Large-N optimal weights ``Cov(Y, f) / Var(f) = 1 / (1 + sigma_k^2)``."""
        return 1.0 / (1.0 + np.asarray(self.sigma) ** 2)

    def oracles(self, lambdas=None) -> list[StratumOracle]:
        """True within-stratum sds of ``Y - lam f`` and ``lam f``."""
        lam = self.oracle_lambdas() if lambdas is None else np.broadcast_to(
            np.asarray(lambdas, dtype=float), (self.K,))
        out = []
        for lk, s in zip(lam, self.sigma):
            out.append(StratumOracle(
                sigma_delta=math.sqrt((1 - lk) ** 2 + lk ** 2 * s ** 2),
                sigma_f=abs(lk) * math.sqrt(1 + s ** 2),
            ))
        return out


SCENARIOS = {
    "homogeneous": dict(mu=(2.0, 2.0), sigma=(1.0, 1.0)),
    "bias": dict(mu=(-2.0, 2.0), sigma=(1.0, 1.0)),
    "noise": dict(mu=(2.0, 2.0), sigma=(0.5, 4.0)),
}


def scenario(name: str, **overrides) -> SyntheticScenario:
    """One of the named two-stratum scenarios, with optional overrides."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS) + ['custom']}")
    params = dict(SCENARIOS[name], name=name)
    params.update(overrides)
    return SyntheticScenario(**params)


def generate_scenario_data(sc: SyntheticScenario, n: int, allocation: AllocationPlan,
                           trial_index: int) -> StratifiedDataset:
    """Draw one stratified dataset for a trial.

    Labels and noise come from separate substreams, so two allocations of the
    same trial share their first ``min(n_k)`` labeled draws and their whole
    unlabeled sample.
    """
    if len(allocation.n_k) != sc.K or allocation.n != n:
        raise ConfigError(f"allocation {allocation.n_k} does not split n={n} over {sc.K} strata")
    strata = []
    for k in range(sc.K):
        nk, Nk = allocation.n_k[k], allocation.N_k[k]
        y = substream(sc.seed, trial_index, k, "labeled_y").standard_normal(nk)
        e = substream(sc.seed, trial_index, k, "labeled_noise").standard_normal(nk)
        yu = substream(sc.seed, trial_index, k, "unlabeled_y").standard_normal(Nk)
        eu = substream(sc.seed, trial_index, k, "unlabeled_noise").standard_normal(Nk)
        mu, s = sc.mu[k], sc.sigma[k]
        strata.append(StratumData(y, y + mu + s * e, yu + mu + s * eu, sc.weights[k]))
    return StratifiedDataset(tuple(strata))


# --------------------------------------------------------------------------
# Labeled pools
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pool:
    """Items with autorater predictions and, where available, human labels.

    Missing labels are NaN. ``confidence`` optionally overrides the prediction
    as the autorater's probability of a positive label; ``stratum`` optionally
    assigns items to user-defined strata.
    """

    label: np.ndarray
    prediction: np.ndarray
    confidence: np.ndarray | None = None
    stratum: np.ndarray | None = None
    binary: bool = False
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        label = np.asarray(self.label, dtype=float)
        pred = np.asarray(self.prediction, dtype=float)
        if label.shape != pred.shape or pred.ndim != 1:
            raise DataError("label and prediction columns must be equal-length vectors")
        if not np.all(np.isfinite(pred)):
            raise DataError("predictions must be finite")
        if np.any(np.isinf(label)):
            raise DataError("labels must be finite")
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "prediction", pred)
        if self.confidence is not None:
            object.__setattr__(self, "confidence", np.asarray(self.confidence, dtype=float))
        if self.stratum is not None:
            object.__setattr__(self, "stratum", np.asarray(self.stratum, dtype=int))
        if self.binary:
            lab = label[~np.isnan(label)]
            if np.any((lab != 0) & (lab != 1)):
                raise DataError("binary pool has labels outside {0, 1}")
            if np.any((pred < 0) | (pred > 1)):
                raise DataError("binary pool has predictions outside [0, 1]")

    def __len__(self) -> int:
        return int(self.prediction.size)

    @property
    def labeled_mask(self) -> np.ndarray:
        return ~np.isnan(self.label)

    @property
    def scores(self) -> np.ndarray:
        """Positive-label probabilities used by the heuristic allocation."""
        return self.prediction if self.confidence is None else self.confidence


@dataclass(frozen=True)
class BinaryFixture:
    pool: Pool
    stratification: Stratification
    true_prob: np.ndarray
    residual_variance: np.ndarray  # exact Var(Y - f | decile) under the generating law


def make_heterogeneous_binary_pool(size: int = 20_000, seed: int = 0, K: int = 10) -> BinaryFixture:
    """Binary pool whose autorater is miscalibrated differently per score decile.

    Predictions are evenly spaced on (0, 1). The true positive rate sharpens the
    prediction towards 0 and 1 and adds a bias of alternating sign in the
    middle deciles, so confident deciles have a far smaller ``Var(Y - f)``
    than uncertain ones.
    """
    f = (np.arange(size) + 0.5) / size
    logit = np.log(f / (1 - f))
    p = 1.0 / (1.0 + np.exp(-2.5 * logit))
    decile = np.minimum((f * K).astype(int), K - 1)
    shift = np.where(decile % 2 == 0, 0.08, -0.08)
    shift[(decile == 0) | (decile == K - 1)] = 0.0
    p = np.clip(p + shift, 0.0, 1.0)
    y = (substream(seed, 0, 0, "fixture").random(size) < p).astype(float)

    strat = quantile_stratify(f, K)
    idx = strat.assign(f)
    resid = np.empty(strat.K)
    for k in range(strat.K):
        m = idx == k
        gap = p[m] - f[m]
        resid[k] = np.mean(p[m] * (1 - p[m])) + np.var(gap)
    pool = Pool(label=y, prediction=f, binary=True)
    return BinaryFixture(pool=pool, stratification=strat, true_prob=p, residual_variance=resid)
