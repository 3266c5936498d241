"""Per-stratum weighting parameters and sampling-budget allocation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    MIN_STRATUM_SIZE,
    DataError,
    DomainError,
    InsufficientDataError,
    StratumData,
    check_weights,
    sample_cov,
    sample_mean_var,
)

VARIANCE_GUARD = 1e-12
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class StratumOracle:
    """True within-stratum standard deviations used for oracle allocation.

    ``sigma_delta`` is the std of ``Y - lambda f`` and ``sigma_f`` the std of
    ``lambda f`` in the stratum.
    """

    sigma_delta: float
    sigma_f: float

    def __post_init__(self):
        for name in ("sigma_delta", "sigma_f"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v!r}")
            if v < 0:
                raise DomainError(f"{name} must be non-negative, got {v!r}")


@dataclass(frozen=True)
class AllocationPlan:
    rho: tuple[float, ...]
    rho_tilde: tuple[float, ...]
    n_k: tuple[int, ...]
    N_k: tuple[int, ...]

    @property
    def n(self) -> int:
        return sum(self.n_k)

    @property
    def N(self) -> int:
        return sum(self.N_k)


def tune_lambda_mean(stratum: StratumData, clip: bool = False) -> float:
    """Variance-minimising weight on the autorater for one stratum.

    Returns ``cov(y, f) / (var(f) + (n_k / N_k) var(f~))``: the covariance and
    first variance come from the labeled pairs, the second from the unlabeled
    predictions. This is the exact minimiser over ``lambda`` of the plug-in
    variance used by the interval, and a plug-in estimate of
    ``Cov(Y, f) / ((1 + n_k / N_k) Var(f))``. Multi-dimensional targets use
    traces. A prediction variance below 1e-12 yields 0.
    """
    n, N = stratum.n, stratum.N
    if n < MIN_STRATUM_SIZE:
        raise InsufficientDataError(f"lambda tuning needs n_k >= {MIN_STRATUM_SIZE}, got {n}")
    if N < 1:
        raise InsufficientDataError("lambda tuning needs at least one unlabeled prediction")
    y, f, fu = stratum.y, stratum.f, stratum.f_unlabeled
    if y.ndim == 1:
        cov = sample_cov(y, f)
        var_f = sample_mean_var(f)[1]
        var_fu = sample_mean_var(fu)[1]
    else:
        cov = sum(sample_cov(y[:, j], f[:, j]) for j in range(y.shape[1]))
        var_f = sum(sample_mean_var(f[:, j])[1] for j in range(y.shape[1]))
        var_fu = sum(sample_mean_var(fu[:, j])[1] for j in range(y.shape[1]))
    denom = var_f + (n / N) * var_fu
    if var_fu < VARIANCE_GUARD or denom < VARIANCE_GUARD:
        return 0.0
    lam = cov / denom
    if clip:
        lam = min(max(lam, 0.0), 1.0)
    return float(lam)


def _neyman(weights: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    scores = weights * sigmas
    total = scores.sum()
    if total <= 0:
        return weights.copy()
    return scores / total


def optimal_rho(oracles: Sequence[StratumOracle], weights) -> tuple[np.ndarray, np.ndarray]:
    """Oracle labeled and unlabeled budget fractions, ``rho_k ∝ w_k sigma_k``.

    A family whose sigmas are all zero falls back to the stratum weights.
    """
    w = check_weights(weights)
    if len(oracles) != w.size:
        raise DomainError(f"{len(oracles)} oracles for {w.size} strata")
    s_delta = np.array([o.sigma_delta for o in oracles])
    s_f = np.array([o.sigma_f for o in oracles])
    return _neyman(w, s_delta), _neyman(w, s_f)


def heuristic_sigma(unlabeled_f, confidences, label_set, lambda_k: float = 1.0) -> float:
    """Estimate of ``sd(Y - lambda_k f | stratum)`` from autorater confidences.

    ``confidences[i, j]`` is the autorater's probability of ``label_set[j]``
    for unlabeled item ``i``; the label distribution of each item is taken to
    be that confidence row.
    """
    f = np.asarray(unlabeled_f, dtype=float)
    c = np.asarray(confidences, dtype=float)
    labels = np.asarray(label_set, dtype=float)
    if f.ndim != 1 or f.size < MIN_STRATUM_SIZE:
        raise InsufficientDataError(f"heuristic sigma needs at least {MIN_STRATUM_SIZE} predictions")
    if c.shape != (f.size, labels.size):
        raise DataError(f"confidence table has shape {c.shape}, expected {(f.size, labels.size)}")
    if np.any(c < 0) or np.any(np.abs(c.sum(axis=1) - 1.0) > 1e-9):
        raise DataError("confidence rows must be non-negative and sum to 1")
    resid = labels[None, :] - lambda_k * f[:, None]
    mu = np.sum(c * resid) / f.size
    var = np.sum(c * (resid - mu) ** 2) / f.size
    return math.sqrt(max(var, 0.0))


def heuristic_sigma_binary(unlabeled_f) -> float:
    """Binary-label shortcut: ``sqrt(mean(f (1 - f)) + var(f))``.

    Estimates ``sd(Y | stratum)`` by the law of total variance, treating each
    prediction as the probability of a positive label.
    """
    f = np.asarray(unlabeled_f, dtype=float)
    if f.size < MIN_STRATUM_SIZE:
        raise InsufficientDataError(f"heuristic sigma needs at least {MIN_STRATUM_SIZE} predictions")
    if np.any(f < 0) or np.any(f > 1):
        raise DataError("binary heuristic needs predictions in [0, 1]")
    var = float(np.mean(f * (1 - f))) + sample_mean_var(f)[1]
    return math.sqrt(var)


def heuristic_rho(unlabeled_by_stratum, weights, confidences_by_stratum=None, label_set=None,
                  lambda_k: float = 1.0) -> np.ndarray:
    """Labeled-budget fractions ``rho_k ∝ w_k sigma_k`` from unlabeled data only.

    Without confidence tables the predictions are treated as binary
    probabilities and :func:`heuristic_sigma_binary` is used; otherwise
    :func:`heuristic_sigma` at ``lambda_k``. Zero sigmas are floored at 1e-6 so
    every stratum keeps a positive share.
    """
    w = check_weights(weights)
    if len(unlabeled_by_stratum) != w.size:
        raise DomainError(f"{len(unlabeled_by_stratum)} strata of predictions for {w.size} weights")
    if confidences_by_stratum is None:
        sig = [heuristic_sigma_binary(f) for f in unlabeled_by_stratum]
    else:
        if label_set is None:
            raise DataError("confidence tables need a label set")
        sig = [heuristic_sigma(f, c, label_set, lambda_k)
               for f, c in zip(unlabeled_by_stratum, confidences_by_stratum)]
    sig = np.maximum(np.array(sig), SIGMA_FLOOR)
    return _neyman(w, sig)
