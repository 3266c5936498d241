"""Classical, PPI++ and stratified prediction-powered mean intervals.

The stratified estimator follows the usual recipe for weighted M-estimators:
minimise the weighted sum of per-stratum rectified losses, then form a plug-in
sandwich covariance from per-stratum gradient covariances. PPI++ is the
single-stratum case and classical inference is the ``lambda = 0`` case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .core import (
    MIN_STRATUM_SIZE,
    CapabilityError,
    DataError,
    DomainError,
    EstimatorConfig,
    InsufficientDataError,
    IntervalResult,
    LabeledPoint,
    StratifiedDataset,
    StratumData,
    StratumDiagnostics,
    check_weights,
    covariance_matrix,
    sample_mean_var,
    z_value,
)


@runtime_checkable
class LossModel(Protocol):
    """Loss interface used by the stratified estimator.

    ``gradient`` and ``hessian`` act on a batch of targets of shape ``(m, d)``
    and return arrays of shape ``(m, d)`` and ``(m, d, d)``. A loss may also
    provide ``closed_form_weighted_minimizer(dataset, lambdas)``; the
    estimator refuses losses without it.
    """

    def gradient(self, theta: np.ndarray, targets: np.ndarray) -> np.ndarray: ...

    def hessian(self, theta: np.ndarray, targets: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class MeanLoss:
    """Squared loss ``0.5 * ||y - theta||^2``, minimised by the mean."""

    dimension: int = 1

    def gradient(self, theta, targets):
        return np.asarray(theta, dtype=float) - _as_2d(targets)

    def hessian(self, theta, targets):
        m = _as_2d(targets).shape[0]
        return np.broadcast_to(np.eye(self.dimension), (m, self.dimension, self.dimension))

    def closed_form_weighted_minimizer(self, data: StratifiedDataset, lambdas) -> np.ndarray:
        # Gradient of the stratified loss is sum_k w_k (theta - c_k) with the
        # theta coefficients summing to one.
        theta = np.zeros(self.dimension)
        for s, lam in zip(data.strata, lambdas):
            unl = _as_2d(s.f_unlabeled).mean(axis=0)
            rect = (_as_2d(s.y) - lam * _as_2d(s.f)).mean(axis=0)
            theta += s.weight * (lam * unl + rect)
        return theta


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def _scalarize(v: np.ndarray):
    return float(v[0]) if v.shape == (1,) else v


# --------------------------------------------------------------------------
# Classical
# --------------------------------------------------------------------------

def classical_mean_ci(labels, alpha: float) -> IntervalResult:
    """Normal-approximation interval from the labeled sample alone."""
    y = np.asarray(labels, dtype=float)
    if y.shape[0] < MIN_STRATUM_SIZE:
        raise InsufficientDataError(
            f"classical interval needs at least {MIN_STRATUM_SIZE} labels, got {y.shape[0]}"
        )
    if not np.all(np.isfinite(y)):
        raise DataError("labels contain non-finite values")
    z = z_value(alpha)
    if y.ndim == 1:
        mean, var = sample_mean_var(y)
    else:
        mean = y.mean(axis=0)
        var = np.diag(covariance_matrix(y))
    variance = var / y.shape[0]
    half = z * np.sqrt(variance)
    return IntervalResult(
        theta_hat=mean, lower=mean - half, upper=mean + half, variance=variance, alpha=alpha
    )


# --------------------------------------------------------------------------
# Stratified PPI
# --------------------------------------------------------------------------

def _check_sizes(data: StratifiedDataset, minimum: int) -> None:
    for k, s in enumerate(data.strata):
        if s.n < minimum or s.N < minimum:
            raise InsufficientDataError(
                f"stratum {k} has n_k={s.n}, N_k={s.N}; each must be at least {minimum}"
            )


def stratppi_point_estimate(data: StratifiedDataset, lambdas, loss: LossModel | None = None):
    """Minimiser of the stratified prediction-powered loss for fixed ``lambdas``."""
    loss = loss or MeanLoss(_dimension(data))
    _check_sizes(data, 1)
    lam = np.broadcast_to(np.asarray(lambdas, dtype=float), (data.K,))
    solver = getattr(loss, "closed_form_weighted_minimizer", None)
    if solver is None:
        raise CapabilityError(f"{type(loss).__name__} has no closed-form weighted minimizer")
    return _scalarize(np.asarray(solver(data, lam), dtype=float))


def _dimension(data: StratifiedDataset) -> int:
    y = data.strata[0].y
    return 1 if y.ndim == 1 else y.shape[1]


def stratified_plugin_variance(data: StratifiedDataset, lambdas, theta=None,
                               loss: LossModel | None = None) -> np.ndarray:
    """Plug-in sandwich covariance of the stratified estimate, per coordinate.

    Per stratum the gradient covariances of the autorater term (scaled by
    ``lambda_k^2 / N_k``) and of the rectifier ``grad(y) - lambda_k grad(f)``
    (scaled by ``1 / n_k``) are accumulated with weight ``w_k^2`` and wrapped in
    the inverse weighted Hessian. Returns the diagonal.
    """
    loss = loss or MeanLoss(_dimension(data))
    lam = np.broadcast_to(np.asarray(lambdas, dtype=float), (data.K,))
    if theta is None:
        theta = stratppi_point_estimate(data, lam, loss)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = theta.shape[0]

    a_w = np.zeros((d, d))
    for s in data.strata:
        a_w += s.weight * loss.hessian(theta, s.y).mean(axis=0)
    a_inv = np.linalg.inv(a_w)

    sigma = np.zeros((d, d))
    for s, lk in zip(data.strata, lam):
        v_f = lk * lk * covariance_matrix(loss.gradient(theta, s.f_unlabeled))
        v_delta = covariance_matrix(loss.gradient(theta, s.y) - lk * loss.gradient(theta, s.f))
        sigma += s.weight ** 2 * a_inv @ (v_f / s.N + v_delta / s.n) @ a_inv
    return np.diag(sigma).copy()


def stratppi_ci(data: StratifiedDataset, config: EstimatorConfig | None = None,
                loss: LossModel | None = None) -> IntervalResult:
    """Stratified prediction-powered interval for the mean.

    Resolves the per-stratum ``lambda`` (fixed from ``config`` or tuned), takes
    the closed-form minimiser of the stratified loss as the point estimate and
    builds a normal interval from the plug-in variance.
    """
    from .tuning import tune_lambda_mean

    config = config or EstimatorConfig()
    _check_sizes(data, MIN_STRATUM_SIZE)
    loss = loss or MeanLoss(_dimension(data))
    if not hasattr(loss, "closed_form_weighted_minimizer"):
        raise CapabilityError(f"{type(loss).__name__} has no closed-form weighted minimizer")
    if data.strata[0].y.ndim > 1 and not isinstance(loss, MeanLoss):
        raise CapabilityError("multi-dimensional targets are only supported for the mean loss")

    lam = config.lambdas_for(data.K)
    if lam is None:
        lam = np.array([tune_lambda_mean(s, clip=config.clip_lambda) for s in data.strata])

    theta = np.atleast_1d(stratppi_point_estimate(data, lam, loss))
    variance = stratified_plugin_variance(data, lam, theta, loss)
    half = z_value(config.alpha) * np.sqrt(variance)

    diagnostics = []
    for s, lk in zip(data.strata, lam):
        rect = _as_2d(s.y) - lk * _as_2d(s.f)
        diagnostics.append(StratumDiagnostics(
            lambda_hat=float(lk),
            n_k=s.n,
            N_k=s.N,
            rectifier_mean=float(rect.mean()),
            unlabeled_mean=float(_as_2d(s.f_unlabeled).mean()),
        ))
    return IntervalResult(
        theta_hat=_scalarize(theta),
        lower=_scalarize(theta - half),
        upper=_scalarize(theta + half),
        variance=_scalarize(variance),
        alpha=config.alpha,
        per_stratum=tuple(diagnostics),
    )


def ppi_pp_ci(labeled, unlabeled_f, config: EstimatorConfig | None = None) -> IntervalResult:
    """PPI++ interval: the stratified interval on a single stratum of weight one.

    ``labeled`` is either a sequence of :class:`LabeledPoint` or a pair of
    arrays ``(y, f)``.
    """
    if isinstance(labeled, tuple) and len(labeled) == 2 and not isinstance(labeled[0], LabeledPoint):
        y, f = labeled
        stratum = StratumData(y, f, unlabeled_f, 1.0)
    else:
        stratum = StratumData.from_points(labeled, unlabeled_f, 1.0)
    return stratppi_ci(StratifiedDataset((stratum,)), config)


def run_estimator(data: StratifiedDataset, config: EstimatorConfig) -> IntervalResult:
    """Dispatch on ``config.method`` for a dataset that is already stratified.

    ``classical`` uses the pooled labels (appropriate when the labels are a
    simple random sample); ``ppi_pp`` pools all strata into one.
    """
    if config.method == "classical":
        y = np.concatenate([s.y for s in data.strata])
        return classical_mean_ci(y, config.alpha)
    if config.method == "ppi_pp":
        pooled = StratumData(
            np.concatenate([s.y for s in data.strata]),
            np.concatenate([s.f for s in data.strata]),
            np.concatenate([s.f_unlabeled for s in data.strata]),
            1.0,
        )
        return stratppi_ci(StratifiedDataset((pooled,), binary=data.binary), config)
    return stratppi_ci(data, config)


# --------------------------------------------------------------------------
# Asymptotic variances of discrete populations
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteStratum:
    """Finite-support joint law of ``(Y, f(X))`` within one stratum.

    ``prob`` are the conditional probabilities of the atoms; ``weight`` is the
    stratum mass.
    """

    y: np.ndarray
    f: np.ndarray
    prob: np.ndarray
    weight: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        f = np.asarray(self.f, dtype=float)
        p = np.asarray(self.prob, dtype=float)
        if not (y.shape == f.shape == p.shape) or y.ndim != 1:
            raise DomainError("atoms y, f and prob must be equal-length vectors")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise DomainError("atom probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "prob", p)

    def moments(self, lam: float) -> tuple[float, float]:
        """Exact ``Var(f)`` and ``Var(Y - lam f)`` under the atom law."""
        p = self.prob
        mf = p @ self.f
        r = self.y - lam * self.f
        mr = p @ r
        return float(p @ (self.f - mf) ** 2), float(p @ (r - mr) ** 2)


def stratified_asymptotic_variance(strata: Sequence[DiscreteStratum], lambdas, r: float,
                                   rho=None, rho_tilde=None) -> float:
    """Asymptotic variance of ``sqrt(n) (theta_hat - theta)`` for the mean.

    ``sum_k w_k^2 (r / rho~_k * lam_k^2 Var(f|k) + 1 / rho_k * Var(Y - lam_k f|k))``
    with ``r = lim n/N``; rates default to the stratum masses.
    """
    w = check_weights([s.weight for s in strata])
    rho = w if rho is None else check_weights(rho, "rho")
    rho_tilde = w if rho_tilde is None else check_weights(rho_tilde, "rho_tilde")
    lam = np.broadcast_to(np.asarray(lambdas, dtype=float), w.shape)
    total = 0.0
    for s, wk, rk, rtk, lk in zip(strata, w, rho, rho_tilde, lam):
        var_f, var_delta = s.moments(lk)
        total += wk * wk * (r / rtk * lk * lk * var_f + var_delta / rk)
    return float(total)


def ppi_asymptotic_variance(pooled: DiscreteStratum, lam: float, r: float) -> float:
    """Unstratified counterpart: ``r lam^2 Var(f) + Var(Y - lam f)``."""
    var_f, var_delta = pooled.moments(lam)
    return float(r * lam * lam * var_f + var_delta)


def pool_strata(strata: Sequence[DiscreteStratum]) -> DiscreteStratum:
    """Marginal atom law obtained by mixing the strata with their masses."""
    return DiscreteStratum(
        y=np.concatenate([s.y for s in strata]),
        f=np.concatenate([s.f for s in strata]),
        prob=np.concatenate([s.weight * s.prob for s in strata]),
        weight=1.0,
    )


def width_from_variance(variance: float, alpha: float) -> float:
    return 2.0 * z_value(alpha) * math.sqrt(variance)
