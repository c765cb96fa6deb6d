"""
Two-stage incremental learning: dynamic windows that grow by ``I`` columns until the critical
length ``T1``, then fixed windows of length ``T1`` that slide by ``I``.
"""
import collections
import logging
import time
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from . import BTMFError, ConfigurationError, ShapeError
from .forecast import rolling_forecast
from .gibbs import (
    CHAIN_STREAM,
    FORECAST_STREAM,
    INIT_STREAM,
    ChainConfig,
    initialize_factors,
    observed_rmse,
    run_imputation_chain,
)
from .kernels import RandomSource
from .model import FactorState, Kind, ObservationSet, PredictionResult, PriorConfig

logger = logging.getLogger(__name__)


class Stage(Enum):
    DYNAMIC = "dynamic"
    FIXED = "fixed"


class WindowPlan(
    collections.namedtuple("WindowPlan", ["windows", "stages", "increment", "critical", "total"])
):
    """Ordered ``[start, end)`` column ranges and their stage."""

    __slots__ = ()

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(zip(self.windows, self.stages))

    def forecast_range(self, index: int, horizon: int) -> Tuple[int, int]:
        """
        Columns ``[start, end)`` that window ``index`` forecasts.

        Every window but the last forecasts up to ``I`` columns that the next window will
        cover; the last one forecasts ``horizon`` columns past the end of the data.
        """
        _, end = self.windows[index]
        if index + 1 < len(self.windows):
            return end, min(end + self.increment, self.total)
        return end, end + horizon

    def coverage(self) -> np.ndarray:
        """Number of windows holding each column."""
        counts = np.zeros(self.total, dtype=np.int64)
        for start, end in self.windows:
            counts[start:end] += 1
        return counts


def plan_windows(total: int, increment: int, critical: int) -> WindowPlan:
    """
    Schedule for ``total`` columns.

    Window ``w`` (1-based) is ``[0, w I)`` while ``w <= T1 / I`` and ``[w I - T1, w I)``
    afterwards. When ``total`` is not a multiple of ``I`` the last window ends at ``total``
    and brings fewer than ``I`` new columns; in the fixed stage it still spans ``T1`` columns.
    """
    if increment < 1:
        raise ConfigurationError(f"window increment must be at least 1, got {increment}")
    if critical < increment or critical % increment:
        raise ConfigurationError(
            f"critical length {critical} must be a positive multiple of the increment {increment}"
        )
    if total < increment:
        raise ConfigurationError(f"{total} columns do not fill one window of {increment}")
    n_static = critical // increment
    ends = list(range(increment, total + 1, increment))
    if ends[-1] != total:
        ends.append(total)
    windows, stages = [], []
    for w, end in enumerate(ends, 1):
        if w <= n_static:
            windows.append((0, end))
            stages.append(Stage.DYNAMIC)
        else:
            windows.append((end - critical, end))
            stages.append(Stage.FIXED)
    return WindowPlan(tuple(windows), tuple(stages), increment, critical, total)


class ImputationAccumulator:
    """
    Entrywise merge of per-window imputations.

    Each window adds its posterior mean once; the merged mean is ``sum / count`` and the merged
    std is the root of the mean per-window variance.
    """

    __slots__ = ("sum", "count", "variance", "n_samples")

    def __init__(self, n_channels: int, n_columns: int):
        self.sum = np.zeros((n_channels, n_columns))
        self.variance = np.zeros((n_channels, n_columns))
        self.count = np.zeros((n_channels, n_columns), dtype=np.int64)
        self.n_samples = 0

    def add(self, start: int, prediction: PredictionResult):
        end = start + prediction.mean.shape[1]
        if prediction.mean.shape[0] != self.sum.shape[0] or end > self.sum.shape[1]:
            raise ShapeError(
                f"imputation of shape {prediction.mean.shape} at column {start} "
                f"does not fit {self.sum.shape}"
            )
        self.sum[:, start:end] += prediction.mean
        self.variance[:, start:end] += prediction.std**2
        self.count[:, start:end] += 1
        self.n_samples = max(self.n_samples, prediction.n_samples)

    def result(self, time_index=None) -> PredictionResult:
        covered = self.count > 0
        divisor = np.where(covered, self.count, 1)
        mean = np.where(covered, self.sum / divisor, np.nan)
        std = np.where(covered, np.sqrt(self.variance / divisor), np.nan)
        return PredictionResult(mean, std, max(self.n_samples, 1), Kind.IMPUTATION, time_index)


WindowOutcome = collections.namedtuple(
    "WindowOutcome",
    ["index", "stage", "start", "end", "imputation", "forecast", "elapsed", "rmse"],
)
IncrementalOutcome = collections.namedtuple(
    "IncrementalOutcome", ["imputation", "forecast", "windows", "coverage"]
)


def warm_start(
    previous: Optional[Tuple[int, FactorState]],
    stage: Stage,
    start: int,
    fresh: FactorState,
) -> FactorState:
    """
    Initial factors of a window.

    Dynamic windows keep the previous ``U`` and start ``X`` from ``fresh``. Fixed windows also
    keep the overlapping columns of the previous ``X``, shifted by the change of start; the
    tail that the previous window did not cover stays as in ``fresh``.
    """
    if previous is None:
        return fresh
    previous_start, factors = previous
    X = fresh.X.copy()
    if stage is Stage.FIXED:
        shift = start - previous_start
        overlap = max(0, min(factors.X.shape[1] - shift, X.shape[1]))
        X[:, :overlap] = factors.X[:, shift : shift + overlap]
    return FactorState(factors.U, X, factors.tau_eps)


def _concatenate(results: Sequence[PredictionResult], n_samples: int) -> Optional[PredictionResult]:
    if not results:
        return None
    return PredictionResult(
        np.hstack([result.mean for result in results]),
        np.hstack([result.std for result in results]),
        n_samples,
        Kind.FORECAST,
        np.concatenate([result.time_index for result in results]),
    )


def run_incremental(
    obs: ObservationSet,
    plan: WindowPlan,
    prior: PriorConfig,
    ar_lags: Sequence[int],
    chain: ChainConfig,
    rng: RandomSource,
    *,
    horizon: Optional[int] = None,
    refresh_interval: Optional[int] = None,
    observed_only: bool = True,
    precision_window: str = "window",
) -> IncrementalOutcome:
    """
    Impute every column of ``obs`` window by window and forecast the columns that follow each
    window, ``horizon`` (default ``I``) of them past the end of the data.

    Window ``w`` draws from ``rng.child(w)``: its initial factors from ``INIT_STREAM``, its chain
    from ``CHAIN_STREAM`` and its forecast from ``FORECAST_STREAM``. This is the layout
    :func:`btmfstream.gibbs.impute` uses, so the first window matches a standalone chain.
    """
    if plan.total != obs.n_columns:
        raise ShapeError(f"plan covers {plan.total} columns, observations have {obs.n_columns}")
    ar_lags = tuple(ar_lags)
    rank = prior.K
    horizon = plan.increment if horizon is None else horizon
    refresh_interval = refresh_interval or plan.increment
    accumulator = ImputationAccumulator(obs.n_channels, obs.n_columns)
    forecasts, outcomes = [], []
    previous = None

    for index, ((start, end), stage) in enumerate(plan):
        window_rng = rng.child(index)
        context = {"window": index, "stage": stage.value, "start": start, "end": end}
        logger.info(
            f"Window {index + 1}/{len(plan)} ({stage.value}) columns [{start}, {end})",
            extra={"data": dict(context, event="window.start")},
        )
        began = time.monotonic()
        window = obs.window(start, end)
        try:
            fresh = initialize_factors(
                rank, obs.n_channels, window.n_columns, window_rng.child(INIT_STREAM)
            )
            init = warm_start(previous, stage, start, fresh)
            factors, ar, imputation = run_imputation_chain(
                window,
                init,
                ar_lags,
                prior,
                chain,
                window_rng.child(CHAIN_STREAM),
                context=context,
            )
            accumulator.add(start, imputation)

            forecast = None
            forecast_start, forecast_end = plan.forecast_range(index, horizon)
            if forecast_end > forecast_start:
                stream = None
                if forecast_start < obs.n_columns:
                    stream = obs.window(forecast_start, min(forecast_end, obs.n_columns))
                forecast = rolling_forecast(
                    stream,
                    factors,
                    ar,
                    forecast_end - forecast_start,
                    refresh_interval,
                    chain,
                    window_rng.child(FORECAST_STREAM),
                    history=window,
                    prior=prior,
                    observed_only=observed_only,
                    precision_window=precision_window,
                )
                forecasts.append(forecast)
        except BTMFError as e:
            raise e.annotate(f"window {index}") from e

        elapsed = time.monotonic() - began
        rmse = observed_rmse(window, imputation.mean)
        logger.info(
            f"Window {index + 1}/{len(plan)} done in {elapsed:.2f}s, observed rmse {rmse:.6g}",
            extra={"data": dict(context, event="window.done", elapsed=elapsed, rmse=rmse)},
        )
        outcomes.append(
            WindowOutcome(index, stage, start, end, imputation, forecast, elapsed, rmse)
        )
        previous = (start, factors)

    n_forecast_samples = chain.n_iters_forecast - chain.burn_in_forecast
    return IncrementalOutcome(
        accumulator.result(obs.time_index),
        _concatenate(forecasts, n_forecast_samples),
        tuple(outcomes),
        accumulator.count,
    )
