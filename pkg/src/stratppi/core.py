"""Domain types and elementary statistical primitives.

Everything here is immutable value data or a pure function. Arrays stored on
the dataclasses are copied and flagged read-only on construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

WEIGHT_TOL = 1e-12
MIN_STRATUM_SIZE = 2


class StratPPIError(Exception):
    """Base class for all package errors."""


class DomainError(StratPPIError, ValueError):
    """An argument lies outside the domain of an operation."""


class DataError(StratPPIError, ValueError):
    """Input data is malformed (non-finite values, bad labels, ...)."""


class InsufficientDataError(DataError):
    """A stratum has fewer observations than an operation needs."""


class ConfigError(StratPPIError, ValueError):
    """A run or estimator configuration is invalid."""


class InfeasibleAllocationError(StratPPIError, ValueError):
    """A sampling budget cannot satisfy the per-stratum minimums."""


class CapabilityError(StratPPIError, NotImplementedError):
    """A loss model lacks a capability the estimator requires."""


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 0:
        raise DataError(f"{name} must be a sequence, got a scalar")
    if arr.size and not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# Normal distribution
# --------------------------------------------------------------------------

# Acklam's rational approximation to the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_cdf(x: float) -> float:
    """Standard normal CDF, computed from ``erfc`` for accuracy in both tails."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    """Return ``z`` such that ``normal_cdf(z) == p``.

    A rational approximation (relative error ~1e-9) is refined with one
    Halley step against the ``erfc``-based CDF, which brings the absolute
    error well under 1e-9 on the whole open interval.

    Raises:
        DomainError: if ``p`` is not strictly inside (0, 1).
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"normal_quantile requires 0 < p < 1, got {p!r}")
    if p == 0.5:
        return 0.0
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)

    # Halley refinement; the residual is taken on the nearer tail to avoid
    # cancellation when p is close to 1.
    if p < 0.5:
        e = normal_cdf(x) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def z_value(alpha: float) -> float:
    """Two-sided critical value ``z_{1 - alpha/2}``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return normal_quantile(1.0 - alpha / 2.0)


# --------------------------------------------------------------------------
# Moments (population normalisation, 1/m)
# --------------------------------------------------------------------------

def sample_mean_var(xs) -> tuple[float, float]:
    """Mean and 1/m-normalised variance of ``xs``.

    A single observation has variance 0.
    """
    x = np.asarray(xs, dtype=float)
    if x.size == 0:
        raise DomainError("sample_mean_var of an empty sequence")
    mean = x.mean()
    dx = x - mean
    return float(mean), float(np.mean(dx * dx))


def sample_cov(xs, ys) -> float:
    """1/m-normalised covariance; ``sample_cov(x, x)`` equals the variance exactly."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size == 0 or y.size == 0:
        raise DomainError("sample_cov of an empty sequence")
    if x.shape != y.shape:
        raise DomainError(f"sample_cov length mismatch: {x.shape} vs {y.shape}")
    dx = x - x.mean()
    dy = y - y.mean()
    return float(np.mean(dx * dy))


def covariance_matrix(g) -> np.ndarray:
    """1/m-normalised covariance of the rows of an ``(m, d)`` array."""
    g = np.asarray(g, dtype=float)
    dg = g - g.mean(axis=0)
    return dg.T @ dg / g.shape[0]


# --------------------------------------------------------------------------
# Data containers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledPoint:
    """A human label ``y`` and the autorater prediction ``f`` for one item."""

    y: float
    f: float

    def __post_init__(self):
        if not (math.isfinite(self.y) and math.isfinite(self.f)):
            raise DataError(f"non-finite labeled point ({self.y}, {self.f})")


@dataclass(frozen=True, eq=False)
class StratumData:
    """Labeled pairs and unlabeled predictions drawn from one stratum.

    ``y`` and ``f`` hold the ``n_k`` labeled pairs; ``f_unlabeled`` holds the
    ``N_k`` predictions on unlabeled items. Multi-dimensional targets use
    arrays of shape ``(m, d)``.
    """

    y: np.ndarray
    f: np.ndarray
    f_unlabeled: np.ndarray
    weight: float

    def __post_init__(self):
        y = _frozen_array(self.y, "labels")
        f = _frozen_array(self.f, "labeled predictions")
        fu = _frozen_array(self.f_unlabeled, "unlabeled predictions")
        if y.shape != f.shape:
            raise DataError(f"labels and predictions differ in shape: {y.shape} vs {f.shape}")
        if fu.size and y.size and fu.shape[1:] != y.shape[1:]:
            raise DataError("unlabeled predictions have a different dimension than labels")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise DataError(f"stratum weight must be positive, got {self.weight!r}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "f_unlabeled", fu)
        object.__setattr__(self, "weight", float(self.weight))

    @classmethod
    def from_points(cls, labeled: Iterable[LabeledPoint], unlabeled_f, weight: float) -> "StratumData":
        pts = list(labeled)
        return cls(
            y=[p.y for p in pts],
            f=[p.f for p in pts],
            f_unlabeled=list(unlabeled_f),
            weight=weight,
        )

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def N(self) -> int:
        return int(self.f_unlabeled.shape[0])

    @property
    def labeled(self) -> list[LabeledPoint]:
        return [LabeledPoint(float(a), float(b)) for a, b in zip(self.y, self.f)]


@dataclass(frozen=True, eq=False)
class StratifiedDataset:
    strata: tuple[StratumData, ...]
    binary: bool = False

    def __post_init__(self):
        strata = tuple(self.strata)
        if not strata:
            raise DataError("a dataset needs at least one stratum")
        total = math.fsum(s.weight for s in strata)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise DataError(f"stratum weights sum to {total!r}, expected 1")
        if self.binary:
            for k, s in enumerate(strata):
                if not np.all((s.y == 0) | (s.y == 1)):
                    raise DataError(f"stratum {k}: binary dataset has labels outside {{0, 1}}")
                for arr in (s.f, s.f_unlabeled):
                    if arr.size and (arr.min() < 0 or arr.max() > 1):
                        raise DataError(f"stratum {k}: binary dataset has predictions outside [0, 1]")
        object.__setattr__(self, "strata", strata)

    @classmethod
    def single(cls, y, f, f_unlabeled, binary: bool = False) -> "StratifiedDataset":
        return cls((StratumData(y, f, f_unlabeled, 1.0),), binary=binary)

    @property
    def K(self) -> int:
        return len(self.strata)

    @property
    def n(self) -> int:
        return sum(s.n for s in self.strata)

    @property
    def N(self) -> int:
        return sum(s.N for s in self.strata)

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.strata])


def check_weights(weights: Sequence[float], what: str = "weights") -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DomainError(f"{what} must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise DomainError(f"{what} must be finite and strictly positive")
    if abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
        raise DomainError(f"{what} sum to {math.fsum(w)!r}, expected 1")
    return w


@dataclass(frozen=True)
class Stratification:
    """Partition of the prediction axis into ``K`` cells.

    Cell ``k`` holds predictions ``x`` with ``boundaries[k-1] <= x < boundaries[k]``.
    """

    boundaries: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(v) for v in self.boundaries)
        if any(not math.isfinite(v) for v in b):
            raise DomainError("stratification boundaries must be finite")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise DomainError("stratification boundaries must be strictly increasing")
        w = tuple(float(v) for v in check_weights(self.weights, "stratum weights"))
        if len(w) != len(b) + 1:
            raise DomainError(f"{len(b)} boundaries need {len(b) + 1} weights, got {len(w)}")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return len(self.weights)

    def assign(self, predictions) -> np.ndarray:
        """Stratum index of each prediction."""
        return np.searchsorted(np.asarray(self.boundaries), np.asarray(predictions, dtype=float),
                               side="right")


# --------------------------------------------------------------------------
# Configuration and results
# --------------------------------------------------------------------------

METHODS = ("classical", "ppi_pp", "stratppi")
ALLOCATIONS = ("proportional", "optimal_oracle", "heuristic")


@dataclass(frozen=True)
class EstimatorConfig:
    """Which estimator to run and how to choose its tuning parameters.

    ``lambdas=None`` tunes the weighting parameter per stratum from data; a
    scalar or per-stratum sequence fixes it. ``clip_lambda`` restricts tuned
    values to [0, 1].
    """

    method: str = "stratppi"
    lambdas: float | tuple[float, ...] | None = None
    allocation: str = "proportional"
    alpha: float = 0.1
    clip_lambda: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.allocation not in ALLOCATIONS:
            raise ConfigError(f"allocation must be one of {ALLOCATIONS}, got {self.allocation!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.lambdas is not None:
            lam = self.lambdas
            if np.ndim(lam) == 0:
                lam = float(lam)
                ok = math.isfinite(lam)
            else:
                lam = tuple(float(v) for v in lam)
                ok = all(math.isfinite(v) for v in lam)
            if not ok:
                raise ConfigError("fixed lambda values must be finite")
            object.__setattr__(self, "lambdas", lam)

    @property
    def tuned(self) -> bool:
        return self.lambdas is None

    @property
    def name(self) -> str:
        if self.method == "classical":
            return "classical"
        if self.method == "ppi_pp":
            return "ppi++"
        suffix = {"proportional": "prop", "optimal_oracle": "opt", "heuristic": "heur"}
        return f"stratppi-{suffix[self.allocation]}"

    def lambdas_for(self, K: int) -> np.ndarray | None:
        if self.lambdas is None:
            return None
        if isinstance(self.lambdas, float):
            return np.full(K, self.lambdas)
        if len(self.lambdas) != K:
            raise ConfigError(f"{len(self.lambdas)} fixed lambdas given for {K} strata")
        return np.array(self.lambdas)


@dataclass(frozen=True)
class StratumDiagnostics:
    lambda_hat: float
    n_k: int
    N_k: int
    rectifier_mean: float
    unlabeled_mean: float


@dataclass(frozen=True)
class IntervalResult:
    """Point estimate and two-sided interval ``theta_hat +/- z * sqrt(variance)``.

    ``variance`` is the estimated variance of ``theta_hat`` itself (already
    divided by the sample sizes). For ``d > 1`` every field is a per-coordinate
    array.
    """

    theta_hat: float
    lower: float
    upper: float
    variance: float
    alpha: float
    per_stratum: tuple[StratumDiagnostics, ...] = field(default=())

    @property
    def width(self):
        return self.upper - self.lower

    def covers(self, theta) -> bool:
        return bool(np.all((self.lower <= theta) & (theta <= self.upper)))

    def to_dict(self) -> dict:
        def _num(v):
            return v.tolist() if isinstance(v, np.ndarray) else float(v)

        return {
            "theta_hat": _num(self.theta_hat),
            "lower": _num(self.lower),
            "upper": _num(self.upper),
            "width": _num(self.width),
            "variance": _num(self.variance),
            "alpha": self.alpha,
            "per_stratum": [
                {
                    "lambda_hat": d.lambda_hat,
                    "n_k": d.n_k,
                    "N_k": d.N_k,
                    "rectifier_mean": d.rectifier_mean,
                    "unlabeled_mean": d.unlabeled_mean,
                }
                for d in self.per_stratum
            ],
        }
