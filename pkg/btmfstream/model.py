"""
Value types of the factorization ``Y ~ U^T X`` with a vector autoregression on ``X``.

Time indices are 0-based throughout: column ``t`` of ``X`` is the temporal factor of
the ``t``-th stamp of the window, and the prior-only branch "t in {1..l_d}" is ``t < l_d``.
"""
import collections
import datetime
import logging
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from . import DataError, InsufficientHistory, InvalidParameter, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_START = datetime.datetime(1970, 1, 1)
DEFAULT_INTERVAL = datetime.timedelta(minutes=10)


class Kind(Enum):
    IMPUTATION = "imputation"
    FORECAST = "forecast"


class ObservationSet(
    collections.namedtuple(
        "ObservationSet",
        [
            "values",
            "mask",
            "channel_ids",
            "channel_groups",
            "sample_interval",
            "start_timestamp",
            "time_index",
        ],
    )
):
    """
    M x T data matrix with its observation mask.

    ``values`` holds NaN wherever ``mask`` is False; inference only ever reads
    :meth:`observed`, which zeroes those positions.
    """

    __slots__ = ()

    def __new__(
        cls,
        values,
        mask=None,
        channel_ids=None,
        channel_groups=None,
        sample_interval=DEFAULT_INTERVAL,
        start_timestamp=DEFAULT_START,
        time_index=None,
    ):
        values = np.array(values, dtype=np.float64, ndmin=2)
        if values.ndim != 2 or 0 in values.shape:
            raise ShapeError(f"values must be a non-empty M x T matrix, got shape {values.shape}")
        if mask is None:
            mask = np.isfinite(values)
        mask = np.asarray(mask)
        if mask.shape != values.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match values {values.shape}")
        if mask.dtype != np.bool_:
            if not np.all((mask == 0) | (mask == 1)):
                raise DataError("mask entries must be 0 or 1")
            mask = mask.astype(bool)
        if not np.all(np.isfinite(values[mask])):
            raise DataError("values must be finite at every observed position")
        values = np.where(mask, values, np.nan)
        rows, columns = values.shape
        if channel_ids is None:
            channel_ids = tuple(f"ch{index}" for index in range(rows))
        if channel_groups is None:
            channel_groups = ("default",) * rows
        channel_ids = tuple(str(item) for item in channel_ids)
        channel_groups = tuple(str(item) for item in channel_groups)
        if len(channel_ids) != rows or len(channel_groups) != rows:
            raise ShapeError(f"need {rows} channel ids and groups")
        if len(set(channel_ids)) != rows:
            raise DataError("channel ids must be unique")
        if time_index is None:
            time_index = np.arange(columns, dtype=np.int64)
        time_index = np.asarray(time_index, dtype=np.int64)
        if time_index.shape != (columns,):
            raise ShapeError(f"time_index must have {columns} entries")
        if not isinstance(sample_interval, datetime.timedelta):
            sample_interval = datetime.timedelta(seconds=float(sample_interval))
        return super().__new__(
            cls,
            values,
            mask,
            channel_ids,
            channel_groups,
            sample_interval,
            start_timestamp,
            time_index,
        )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def observed(self) -> np.ndarray:
        return np.where(self.mask, self.values, 0.0)

    def window(self, start: int, end: int) -> "ObservationSet":
        """Columns ``[start, end)`` with their absolute time indices."""
        if not 0 <= start < end <= self.n_columns:
            raise ShapeError(f"window [{start}, {end}) outside 0..{self.n_columns}")
        return self._replace(
            values=self.values[:, start:end],
            mask=self.mask[:, start:end],
            time_index=self.time_index[start:end],
        )

    def with_mask(self, mask) -> "ObservationSet":
        """Keep only positions observed both here and in ``mask``."""
        mask = np.asarray(mask).astype(bool) & self.mask
        return self.__class__(
            self.values,
            mask,
            self.channel_ids,
            self.channel_groups,
            self.sample_interval,
            self.start_timestamp,
            self.time_index,
        )

    def rows_for_group(self, group: Optional[str]) -> Tuple[int, ...]:
        if group is None:
            return tuple(range(self.n_channels))
        rows = tuple(index for index, label in enumerate(self.channel_groups) if label == group)
        if not rows:
            raise DataError(f"no channel belongs to group {group!r}")
        return rows

    def timestamp(self, index: int) -> datetime.datetime:
        return self.start_timestamp + int(index) * self.sample_interval


class FactorState(collections.namedtuple("FactorState", ["U", "X", "tau_eps"])):
    """Spatial factors ``U`` (K x M), temporal factors ``X`` (K x T) and noise precision."""

    __slots__ = ()

    def __new__(cls, U, X, tau_eps=1.0):
        U = np.array(U, dtype=np.float64, ndmin=2)
        X = np.array(X, dtype=np.float64, ndmin=2)
        if U.shape[0] != X.shape[0]:
            raise ShapeError(f"U has rank {U.shape[0]} but X has rank {X.shape[0]}")
        if not tau_eps > 0:
            raise InvalidParameter(f"tau_eps must be positive, got {tau_eps}")
        return super().__new__(cls, U, X, float(tau_eps))

    @property
    def K(self) -> int:
        return self.U.shape[0]

    def check(self, obs: ObservationSet) -> "FactorState":
        if self.U.shape[1] != obs.n_channels or self.X.shape[1] != obs.n_columns:
            raise ShapeError(
                f"factors cover {self.U.shape[1]} x {self.X.shape[1]} "
                f"but observations are {obs.n_channels} x {obs.n_columns}"
            )
        return self


class ARModel(collections.namedtuple("ARModel", ["lags", "A", "Sigma"])):
    """
    ``x_t ~ N(A^T z_t, Sigma)`` with ``z_t = [x_{t-l_1}; ...; x_{t-l_d}]``.

    ``A`` is the (K d) x K vertical stack of the per-lag blocks, so lag ``j`` contributes
    ``A_j^T x_{t - l_j}`` to the mean.
    """

    __slots__ = ()

    def __new__(cls, lags, A, Sigma):
        lags = tuple(int(lag) for lag in lags)
        if not lags or lags[0] < 1 or any(b <= a for a, b in zip(lags, lags[1:])):
            raise InvalidParameter(f"lags {lags} must be non-empty, positive, strictly increasing")
        Sigma = np.array(Sigma, dtype=np.float64, ndmin=2)
        rank = Sigma.shape[0]
        A = np.array(A, dtype=np.float64, ndmin=2).reshape(rank * len(lags), rank)
        return super().__new__(cls, lags, A, Sigma)

    @property
    def order(self) -> int:
        return len(self.lags)

    @property
    def max_lag(self) -> int:
        return self.lags[-1]

    @property
    def K(self) -> int:
        return self.Sigma.shape[0]

    def block(self, j: int) -> np.ndarray:
        return self.A[j * self.K : (j + 1) * self.K]

    @classmethod
    def null(cls, lags: Sequence[int], rank: int) -> "ARModel":
        return cls(lags, np.zeros((rank * len(lags), rank)), np.eye(rank))


class PriorConfig(
    collections.namedtuple(
        "PriorConfig", ["mu0", "beta0", "W0", "v0", "Lambda0", "V0", "Psi0", "a0", "b0"]
    )
):
    __slots__ = ()

    def __new__(cls, mu0, beta0, W0, v0, Lambda0, V0, Psi0, a0, b0):
        mu0 = np.array(mu0, dtype=np.float64, ndmin=1)
        rank = mu0.size
        W0 = np.array(W0, dtype=np.float64, ndmin=2)
        Lambda0 = np.array(Lambda0, dtype=np.float64, ndmin=2)
        V0 = np.array(V0, dtype=np.float64, ndmin=2)
        Psi0 = np.array(Psi0, dtype=np.float64, ndmin=2)
        if not beta0 > 0:
            raise InvalidParameter(f"beta0 must be positive, got {beta0}")
        if not v0 > rank - 1:
            raise InvalidParameter(f"v0 ({v0}) must exceed K - 1 = {rank - 1}")
        if not (a0 > 0 and b0 > 0):
            raise InvalidParameter(f"a0 and b0 must be positive, got {a0}, {b0}")
        if W0.shape != (rank, rank) or Psi0.shape != (rank, rank):
            raise ShapeError(f"W0 and Psi0 must be {rank} x {rank}")
        if Lambda0.shape[1] != rank or V0.shape != (Lambda0.shape[0], Lambda0.shape[0]):
            raise ShapeError("Lambda0 must be (K d) x K and V0 (K d) x (K d)")
        return super().__new__(
            cls, mu0, float(beta0), W0, float(v0), Lambda0, V0, Psi0, float(a0), float(b0)
        )

    @classmethod
    def default(
        cls,
        rank: int,
        order: int,
        *,
        beta0=1.0,
        v0=None,
        a0=1e-6,
        b0=1e-6,
        mu0=0.0,
        w0_scale=1.0,
        v0_scale=1.0,
        psi0_scale=1.0,
    ) -> "PriorConfig":
        """mu0 = Lambda0 = 0, W0 = V0 = Psi0 = identity, beta0 = 1, v0 = K, a0 = b0 = 1e-6."""
        return cls(
            mu0=np.full(rank, float(mu0)),
            beta0=beta0,
            W0=w0_scale * np.eye(rank),
            v0=rank if v0 is None else v0,
            Lambda0=np.zeros((rank * order, rank)),
            V0=v0_scale * np.eye(rank * order),
            Psi0=psi0_scale * np.eye(rank),
            a0=a0,
            b0=b0,
        )

    @property
    def K(self) -> int:
        return self.mu0.size


class SpatialHyperState(collections.namedtuple("SpatialHyperState", ["mu_u", "Lambda_u"])):
    __slots__ = ()

    @classmethod
    def prior(cls, prior: PriorConfig) -> "SpatialHyperState":
        return cls(prior.mu0.copy(), np.eye(prior.K))


class PredictionResult(
    collections.namedtuple("PredictionResult", ["mean", "std", "n_samples", "kind", "time_index"])
):
    """Posterior mean and standard deviation per entry, over ``n_samples`` chain samples."""

    __slots__ = ()

    def __new__(cls, mean, std, n_samples, kind, time_index=None):
        mean = np.array(mean, dtype=np.float64, ndmin=2)
        std = np.array(std, dtype=np.float64, ndmin=2)
        if std.shape != mean.shape:
            raise ShapeError(f"std shape {std.shape} does not match mean {mean.shape}")
        if n_samples < 1:
            raise InvalidParameter("a prediction needs at least one sample")
        if time_index is None:
            time_index = np.arange(mean.shape[1], dtype=np.int64)
        return super().__new__(
            cls, mean, np.maximum(std, 0.0), int(n_samples), Kind(kind), np.asarray(time_index)
        )

    def band(self, width: float = 3.0) -> Tuple[np.ndarray, np.ndarray]:
        return self.mean - width * self.std, self.mean + width * self.std


class RunningMoments:
    """Single pass mean and second central moment (Welford); nothing is stored per sample."""

    __slots__ = ("count", "mean", "m2")

    def __init__(self, shape):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def push(self, sample: np.ndarray):
        self.count += 1
        delta = sample - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (sample - self.mean)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(np.maximum(self.m2 / self.count, 0.0))

    def result(self, kind: Kind, time_index=None) -> PredictionResult:
        return PredictionResult(self.mean.copy(), self.std, self.count, kind, time_index)


def reconstruct(factors: FactorState) -> np.ndarray:
    """``U^T X``; entry (i, t) is ``u_i^T x_t``."""
    U, X = factors.U, factors.X
    if U.shape[0] != X.shape[0]:
        raise ShapeError(f"U has rank {U.shape[0]} but X has rank {X.shape[0]}")
    return U.T @ X


def lagged_stack(X: np.ndarray, lags: Sequence[int], t: int) -> np.ndarray:
    """``z_t``: the lagged columns ``x_{t-l_1}, ..., x_{t-l_d}`` stacked (0-based ``t``)."""
    if t - lags[-1] < 0 or t > X.shape[1]:
        raise InsufficientHistory(
            f"time {t} needs {lags[-1]} columns of history (0-based, t >= l_d)"
        )
    return np.concatenate([X[:, t - lag] for lag in lags])


def lagged_design(X: np.ndarray, lags: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Regression pair of the AR model over one window.

    ``P`` stacks ``x_t`` and ``Q`` stacks ``z_t`` as rows for ``t = l_d .. T-1``, giving
    ``(T - l_d) x K`` and ``(T - l_d) x (K d)`` matrices.
    """
    columns = X.shape[1]
    max_lag = lags[-1]
    if columns <= max_lag:
        raise InsufficientHistory(
            f"{columns} columns cannot fit an AR model with max lag {max_lag}"
        )
    P = X[:, max_lag:].T
    Q = np.hstack([X[:, max_lag - lag : columns - lag].T for lag in lags])
    return P, Q


def ar_mean(ar: ARModel, X: np.ndarray, t: int) -> np.ndarray:
    """``A^T z_t`` for 0-based ``t >= l_d``; earlier stamps use the N(0, I) prior instead."""
    return ar.A.T @ lagged_stack(X, ar.lags, t)
