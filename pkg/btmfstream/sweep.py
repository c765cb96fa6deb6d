"""
Accuracy sweeps over rank, missing scenario and missing rate.

Each row of the table masks the truth, imputes the (optionally truncated) data and, with a
split column, rolls a forecast over the rest.
"""
import logging
import math
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import UndefinedMetric
from .config import RunConfig
from .forecast import rolling_forecast
from .gibbs import FORECAST_STREAM, impute
from .kernels import RandomSource
from .model import ObservationSet, PriorConfig
from .scenarios import MissingSpec, Scenario, accuracy, generate_mask

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("rank", "scenario", "eta", "rho_impute", "rho_forecast", "n_impute", "n_forecast")


def sweep_spec(scenario, eta: float, block_length: int, target_group, seed: int) -> MissingSpec:
    """A one-rate MissingSpec; MM splits ``eta`` evenly between structured and random missing."""
    scenario = Scenario.parse(scenario)
    if scenario is Scenario.RM:
        return MissingSpec(scenario, eta, 0.0, block_length, target_group, seed)
    if scenario is Scenario.SM:
        return MissingSpec(scenario, 0.0, eta, block_length, target_group, seed)
    return MissingSpec(scenario, eta / 2.0, eta / 2.0, block_length, target_group, seed)


def _rho(truth: np.ndarray, estimate: np.ndarray, positions: np.ndarray):
    count = int(positions.sum())
    try:
        return accuracy(truth[positions], estimate[positions]), count
    except UndefinedMetric:
        return math.nan, count


def evaluate_case(
    truth: ObservationSet,
    mask: np.ndarray,
    rank: int,
    config: RunConfig,
    split: Optional[int] = None,
):
    """``(rho_impute, rho_forecast, n_impute, n_forecast)`` for one masked dataset."""
    masked = truth.with_mask(mask)
    split = truth.n_columns if split is None else split
    history = masked.window(0, split)
    prior = PriorConfig.default(rank, len(config.lags), **config.prior_overrides)
    rng = RandomSource(config.chain.seed)
    outcome = impute(history, rank, config.lags, config.chain, prior, rng)

    known = truth.mask[:, :split] & ~masked.mask[:, :split]
    rho_impute, n_impute = _rho(truth.values[:, :split], outcome.prediction.mean, known)

    rho_forecast, n_forecast = math.nan, 0
    if split < truth.n_columns:
        stream = masked.window(split, truth.n_columns)
        forecast = rolling_forecast(
            stream,
            outcome.factors,
            outcome.ar,
            stream.n_columns,
            config.refresh_interval,
            config.chain,
            rng.child(0).child(FORECAST_STREAM),
            history=history,
            prior=prior,
            observed_only=config.observed_only,
            precision_window=config.precision_window,
        )
        rho_forecast, n_forecast = _rho(
            truth.values[:, split:], forecast.mean, truth.mask[:, split:]
        )
    return rho_impute, rho_forecast, n_impute, n_forecast


def run_sweep(
    truth: ObservationSet,
    ranks: Sequence[int],
    scenarios: Sequence,
    rates: Sequence[float],
    config: RunConfig,
    *,
    split: Optional[int] = None,
    block_length: int = 144,
    target_group: Optional[str] = None,
) -> pd.DataFrame:
    rows = []
    for rank in ranks:
        for scenario in scenarios:
            for eta in rates:
                spec = sweep_spec(scenario, eta, block_length, target_group, config.chain.seed)
                mask = generate_mask(spec, truth.n_channels, truth.n_columns, truth.channel_groups)
                rho_impute, rho_forecast, n_impute, n_forecast = evaluate_case(
                    truth, mask, int(rank), config, split
                )
                logger.info(
                    f"rank={rank} scenario={spec.scenario.value} eta={eta:g}: "
                    f"impute {rho_impute:.2f}%, forecast {rho_forecast:.2f}%",
                    extra={
                        "data": {
                            "event": "sweep.case",
                            "rank": int(rank),
                            "scenario": spec.scenario.value,
                            "eta": float(eta),
                            "rho_impute": rho_impute,
                            "rho_forecast": rho_forecast,
                        }
                    },
                )
                rows.append(
                    (
                        int(rank),
                        spec.scenario.value,
                        float(eta),
                        rho_impute,
                        rho_forecast,
                        n_impute,
                        n_forecast,
                    )
                )
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)
