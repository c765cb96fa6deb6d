"""
Planted low-rank datasets whose temporal factors follow an exact AR model on lags {1, 2}.

Factor 0 is a constant level; factor ``k > 0`` is a sinusoid of period ``PERIODS[k - 1]``,
which satisfies ``x_t = 2 rho cos(w) x_{t-1} - rho^2 x_{t-2}`` with ``rho = 1``. With
``innovation > 0`` the recursion is driven by Gaussian noise and ``rho`` drops to ``damping``.
"""
import collections
import datetime
import logging

import numpy as np

from . import InvalidParameter
from .kernels import RandomSource
from .model import ARModel, FactorState, ObservationSet

logger = logging.getLogger(__name__)

PERIODS = (1008, 144, 288, 72, 48, 432, 96, 36, 720, 24, 216, 60)
SYNTH_LAGS = (1, 2)
DEFAULT_DAMPING = 0.999
GROUPS = ("strain", "temperature")

PlantedData = collections.namedtuple("PlantedData", ["obs", "factors", "ar"])


def planted_ar(rank: int, damping: float = 1.0) -> ARModel:
    """Diagonal AR model on lags {1, 2} that the planted factors obey."""
    if rank - 1 > len(PERIODS):
        raise InvalidParameter(f"at most {len(PERIODS) + 1} planted factors, got {rank}")
    omegas = np.array([0.0] + [2.0 * np.pi / period for period in PERIODS[: rank - 1]])
    first = np.diag(2.0 * damping * np.cos(omegas))
    second = np.diag(np.full(rank, -damping * damping))
    return ARModel(SYNTH_LAGS, np.vstack([first, second]), np.eye(rank))


def planted_factors(
    rank: int, n_columns: int, rng: RandomSource, innovation: float = 0.0, damping=None
) -> np.ndarray:
    generator = rng.generator
    level = np.ones(n_columns)
    if rank == 1:
        return level[None, :]
    if innovation <= 0:
        t = np.arange(n_columns)
        amplitude = generator.uniform(0.5, 1.5, size=rank - 1)
        phase = generator.uniform(0.0, 2.0 * np.pi, size=rank - 1)
        omegas = np.array([2.0 * np.pi / period for period in PERIODS[: rank - 1]])
        waves = amplitude[:, None] * np.cos(omegas[:, None] * t[None, :] + phase[:, None])
        return np.vstack([level, waves])
    ar = planted_ar(rank, DEFAULT_DAMPING if damping is None else damping)
    X = np.zeros((rank, n_columns))
    X[:, :2] = generator.uniform(0.5, 1.5, size=(rank, 2))
    X[0, :2] = 1.0
    noise = innovation * generator.standard_normal((rank, n_columns))
    noise[0] = 0.0
    for t in range(2, n_columns):
        X[:, t] = ar.block(0).T @ X[:, t - 1] + ar.block(1).T @ X[:, t - 2] + noise[:, t]
    X[0] = 1.0
    return X


def synthesize(
    n_channels: int = 20,
    n_columns: int = 2000,
    rank: int = 4,
    noise: float = 0.0,
    innovation: float = 0.0,
    seed: int = 0,
    interval: datetime.timedelta = datetime.timedelta(minutes=10),
    start: datetime.datetime = datetime.datetime(2020, 1, 1),
    temperature_channels=None,
) -> PlantedData:
    """
    ``Y = U^T X`` plus observation noise of standard deviation ``noise * RMS(U^T X)``.

    The last quarter of the channels (at least one when ``n_channels > 1``) is labelled
    ``temperature``, the rest ``strain``.
    """
    if n_channels < 1 or n_columns < 3 or rank < 1:
        raise InvalidParameter("need at least one channel, three columns and rank 1")
    if noise < 0 or innovation < 0:
        raise InvalidParameter("noise levels must be non-negative")
    rng = RandomSource(seed)
    X = planted_factors(rank, n_columns, rng.child(0), innovation)
    U = rng.child(1).standard_normal((rank, n_channels))
    clean = U.T @ X
    values = clean
    if noise > 0:
        scale = noise * float(np.sqrt(np.mean(clean * clean)))
        values = clean + scale * rng.child(2).standard_normal(clean.shape)
    if temperature_channels is None:
        temperature_channels = max(1, n_channels // 4) if n_channels > 1 else 0
    groups = [GROUPS[0]] * (n_channels - temperature_channels) + [GROUPS[1]] * temperature_channels
    ids = [f"S{index + 1:02d}" for index in range(n_channels - temperature_channels)]
    ids += [f"T{index + 1:02d}" for index in range(temperature_channels)]
    obs = ObservationSet(values, None, ids, groups, interval, start)
    logger.debug(
        f"Planted rank {rank} data of shape {obs.shape}",
        extra={"data": {"event": "synth.planted", "rank": rank, "noise": noise, "seed": seed}},
    )
    damping = 1.0 if innovation <= 0 else DEFAULT_DAMPING
    return PlantedData(obs, FactorState(U, X), planted_ar(rank, damping))
