"""
Rolling forecasts with ``{X, A}`` held fixed, conditioning on each column as it arrives.

For every step the predictive mean ``U^T (A^T z_{t+1})`` is emitted first; the actual column
(possibly incomplete) is then ingested to update ``x_{t+1}`` and ``tau_eps``.
"""
import collections
import logging
from typing import Optional

import numpy as np
import scipy.linalg as linalg

from . import BTMFError, InsufficientHistory, InvalidParameter
from .gibbs import (
    Gaussian,
    ChainConfig,
    sample_spatial_factors,
    sample_spatial_hyperparams,
)
from .kernels import (
    RandomSource,
    cholesky,
    sample_gamma,
    sample_inverse_wishart,
    sample_mvn_precision,
    spd_inverse,
    symmetrize,
)
from .model import (
    ARModel,
    FactorState,
    Kind,
    ObservationSet,
    PredictionResult,
    PriorConfig,
    RunningMoments,
    lagged_stack,
)

logger = logging.getLogger(__name__)

# stream ids below one forecast step
PREDICT_STREAM = 0
INGEST_STREAM = 1
REFRESH_STREAM = 2

PRECISION_WINDOWS = ("window", "column")

InnovationPosterior = collections.namedtuple("InnovationPosterior", ["Psi", "dof"])
ForecastStep = collections.namedtuple("ForecastStep", ["mean", "std", "x_next"])


def innovation_posterior(x_t, ar: ARModel, z_t, prior: PriorConfig) -> InnovationPosterior:
    residual = np.asarray(x_t, dtype=np.float64) - ar.A.T @ np.asarray(z_t, dtype=np.float64)
    return InnovationPosterior(symmetrize(prior.Psi0 + np.outer(residual, residual)), prior.v0 + 1)


def update_innovation_covariance(
    x_t, ar: ARModel, z_t, prior: PriorConfig, rng: RandomSource
) -> np.ndarray:
    """Draw ``Sigma~`` with ``Sigma~^-1 ~ W(Psi*^-1, v0 + 1)`` from the one-step residual."""
    posterior = innovation_posterior(x_t, ar, z_t, prior)
    return sample_inverse_wishart(posterior.Psi, posterior.dof, rng, "Psi0* (forecast)")


def current_factor_posterior(
    y_column,
    U: np.ndarray,
    ar_mean,
    Sigma_tilde: np.ndarray,
    tau_eps: float,
    *,
    mask=None,
    observed_only: bool = True,
) -> Gaussian:
    """
    Gaussian conditional of the newest temporal factor given the incoming column.

    ``y_column`` holds NaN (or ``mask`` False) at missing channels. With ``observed_only``
    the likelihood sums run over observed channels; otherwise missing entries are filled
    with the reconstruction ``u_i^T (A^T z_t)`` and every channel contributes.
    """
    y_column = np.asarray(y_column, dtype=np.float64).reshape(-1)
    ar_mean = np.asarray(ar_mean, dtype=np.float64).reshape(-1)
    if mask is None:
        mask = np.isfinite(y_column)
    mask = np.asarray(mask, dtype=bool)
    if y_column.size != U.shape[1] or mask.shape != y_column.shape:
        raise InvalidParameter(
            f"column of {y_column.size} entries does not match {U.shape[1]} channels"
        )
    if observed_only:
        loadings = U[:, mask]
        values = y_column[mask]
    else:
        loadings = U
        values = np.where(mask, y_column, U.T @ ar_mean)
    prior_precision = spd_inverse(Sigma_tilde, "Sigma~")
    precision = symmetrize(prior_precision + tau_eps * (loadings @ loadings.T))
    rhs = tau_eps * (loadings @ values) + prior_precision @ ar_mean
    factor = cholesky(precision, "Sigma~* (forecast)")
    return Gaussian(linalg.cho_solve((factor, True), rhs, check_finite=False), precision)


def sample_current_temporal_factor(
    y_column,
    U: np.ndarray,
    ar_mean,
    Sigma_tilde: np.ndarray,
    tau_eps: float,
    rng: RandomSource,
    *,
    mask=None,
    observed_only: bool = True,
) -> np.ndarray:
    posterior = current_factor_posterior(
        y_column, U, ar_mean, Sigma_tilde, tau_eps, mask=mask, observed_only=observed_only
    )
    return sample_mvn_precision(posterior.mean, posterior.precision, rng, "Sigma~* (forecast)")


def forecast_step(
    U: np.ndarray,
    ar: ARModel,
    history: np.ndarray,
    rng: RandomSource,
    n_iters: int,
    burn_in: int,
    prior: Optional[PriorConfig] = None,
) -> ForecastStep:
    """
    One-step-ahead forecast from the last ``l_d`` columns of ``history``.

    The mean is ``U^T (A^T z_{t+1})``. The std is the spread of ``U^T x~`` over the draws
    collected from iteration ``burn_in`` on, where ``x~`` comes from the innovation cycle run
    without any observation. ``x_next`` is the final draw.
    """
    history = np.asarray(history, dtype=np.float64)
    if not 0 <= burn_in < n_iters:
        raise InvalidParameter(f"forecast needs 0 <= burn_in < n_iters, got {burn_in}, {n_iters}")
    if history.ndim != 2 or history.shape[1] < ar.max_lag:
        raise InsufficientHistory(
            f"forecast needs {ar.max_lag} columns of temporal factors, got {history.shape[-1]}"
        )
    prior = prior or PriorConfig.default(ar.K, ar.order)
    z_next = lagged_stack(history, ar.lags, history.shape[1])
    ar_mean = ar.A.T @ z_next
    nothing = np.full(U.shape[1], np.nan)
    moments = RunningMoments(U.shape[1])
    x_next = ar_mean
    for iteration in range(n_iters):
        Sigma_tilde = update_innovation_covariance(
            x_next, ar, z_next, prior, rng.child(iteration, 0)
        )
        x_next = sample_current_temporal_factor(
            nothing, U, ar_mean, Sigma_tilde, 1.0, rng.child(iteration, 1)
        )
        if iteration >= burn_in:
            moments.push(U.T @ x_next)
    return ForecastStep(U.T @ ar_mean, moments.std, x_next)


class _WindowResidual:
    """Squared residual of the working window with its oldest column dropped."""

    __slots__ = ("count", "sse")

    def __init__(self, values, mask, U, X):
        mask = mask[:, 1:]
        residual = np.where(mask, np.where(mask, values[:, 1:], 0.0) - U.T @ X[:, 1:], 0.0)
        self.count = int(mask.sum())
        self.sse = float(np.sum(residual * residual))


def _column_residual(y_column, y_mask, U, x_t):
    residual = np.where(y_mask, np.where(y_mask, y_column, 0.0) - U.T @ x_t, 0.0)
    return int(y_mask.sum()), float(residual @ residual)


def rolling_forecast(
    stream: Optional[ObservationSet],
    state: FactorState,
    ar: ARModel,
    horizon: int,
    refresh_interval: int,
    chain: ChainConfig,
    rng: RandomSource,
    *,
    history: ObservationSet,
    prior: Optional[PriorConfig] = None,
    observed_only: bool = True,
    precision_window: str = "window",
) -> PredictionResult:
    """
    Forecast ``horizon`` columns one at a time.

    ``history`` is the working window that ``state.X`` covers and ``stream`` carries the actual
    columns that follow it. ``stream`` may be shorter than ``horizon`` or ``None``; columns it
    does not hold are ingested as fully unobserved. After each step the window slides by one
    column, and every ``refresh_interval`` steps ``U`` and its hyperparameters are resampled
    over it.

    Step ``s`` predicts from ``rng.child(s, PREDICT_STREAM)``, so a horizon of one reproduces
    :func:`forecast_step` exactly.
    """
    if horizon < 1:
        raise InvalidParameter(f"horizon must be at least 1, got {horizon}")
    if refresh_interval < 1:
        raise InvalidParameter(f"refresh_interval must be at least 1, got {refresh_interval}")
    if precision_window not in PRECISION_WINDOWS:
        raise InvalidParameter(
            f"precision_window must be one of {PRECISION_WINDOWS}, got {precision_window!r}"
        )
    state.check(history)
    if history.n_columns < ar.max_lag:
        raise InsufficientHistory(
            f"working window of {history.n_columns} columns is shorter than max lag {ar.max_lag}"
        )
    if stream is not None and stream.n_channels != history.n_channels:
        raise InvalidParameter(
            f"stream has {stream.n_channels} channels but the window has {history.n_channels}"
        )
    prior = prior or PriorConfig.default(ar.K, ar.order)
    available = 0 if stream is None else stream.n_columns
    n_channels = history.n_channels

    U, X, tau_eps = state.U.copy(), state.X.copy(), state.tau_eps
    values, mask = history.values.copy(), history.mask.copy()
    means = np.zeros((n_channels, horizon))
    stds = np.zeros((n_channels, horizon))

    for step in range(horizon):
        step_rng = rng.child(step)
        if step < available:
            y_column, y_mask = stream.values[:, step], stream.mask[:, step]
        else:
            y_column, y_mask = np.full(n_channels, np.nan), np.zeros(n_channels, dtype=bool)
        try:
            means[:, step], stds[:, step], x_t = forecast_step(
                U,
                ar,
                X,
                step_rng.child(PREDICT_STREAM),
                chain.n_iters_forecast,
                chain.burn_in_forecast,
                prior,
            )

            z_t = lagged_stack(X, ar.lags, X.shape[1])
            ar_mean = ar.A.T @ z_t
            kept = _WindowResidual(values, mask, U, X) if precision_window == "window" else None
            ingest = step_rng.child(INGEST_STREAM)
            for iteration in range(chain.n_iters_forecast):
                Sigma_tilde = update_innovation_covariance(
                    x_t, ar, z_t, prior, ingest.child(iteration, 0)
                )
                x_t = sample_current_temporal_factor(
                    y_column,
                    U,
                    ar_mean,
                    Sigma_tilde,
                    tau_eps,
                    ingest.child(iteration, 1),
                    mask=y_mask,
                    observed_only=observed_only,
                )
                count, sse = _column_residual(y_column, y_mask, U, x_t)
                if kept is not None:
                    count, sse = count + kept.count, sse + kept.sse
                if count:
                    tau_eps = sample_gamma(
                        prior.a0 + 0.5 * count, prior.b0 + 0.5 * sse, ingest.child(iteration, 2)
                    )

            X = np.column_stack([X[:, 1:], x_t])
            values = np.column_stack([values[:, 1:], y_column])
            mask = np.column_stack([mask[:, 1:], y_mask])

            if (step + 1) % refresh_interval == 0:
                window = history._replace(values=values, mask=mask)
                refresh = step_rng.child(REFRESH_STREAM)
                hyper = sample_spatial_hyperparams(U, prior, refresh.child(0))
                U = sample_spatial_factors(
                    window, X, hyper, tau_eps, refresh.child(1), chain.threads
                )
        except BTMFError as e:
            raise e.annotate(f"forecast step {step}") from e
        logger.debug(
            f"Forecast step {step + 1}/{horizon}",
            extra={
                "data": {
                    "event": "forecast.step",
                    "step": step,
                    "horizon": horizon,
                    "tau_eps": tau_eps,
                    "observed": int(y_mask.sum()),
                }
            },
        )

    start = int(history.time_index[-1]) + 1
    time_index = np.arange(start, start + horizon, dtype=np.int64)
    n_samples = chain.n_iters_forecast - chain.burn_in_forecast
    return PredictionResult(means, stds, n_samples, Kind.FORECAST, time_index)
