"""
Missing-data scenarios and the normalized accuracy metric.

Masks use the observation convention: True keeps a cell, False drops it.
"""
import collections
import logging
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import InfeasibleSpec, InvalidParameter, ShapeError, UndefinedMetric
from .kernels import RandomSource

logger = logging.getLogger(__name__)

STRUCTURED_STREAM = 0
RANDOM_STREAM = 1


class Scenario(Enum):
    RM = "RM"
    SM = "SM"
    MM = "MM"

    @classmethod
    def parse(cls, value) -> "Scenario":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise InvalidParameter(f"unknown scenario {value!r}, expected one of RM, SM, MM")


class MissingSpec(
    collections.namedtuple(
        "MissingSpec",
        [
            "scenario",
            "eta_random",
            "eta_structured",
            "block_length",
            "target_group",
            "seed",
            "shared_blocks",
        ],
    )
):
    __slots__ = ()

    def __new__(
        cls,
        scenario,
        eta_random=0.0,
        eta_structured=0.0,
        block_length=144,
        target_group=None,
        seed=0,
        shared_blocks=False,
    ):
        scenario = Scenario.parse(scenario)
        eta_random, eta_structured = float(eta_random), float(eta_structured)
        if scenario is Scenario.RM:
            eta_structured = 0.0
        elif scenario is Scenario.SM:
            eta_random = 0.0
        for label, rate in (("eta_random", eta_random), ("eta_structured", eta_structured)):
            if not 0.0 <= rate <= 1.0:
                raise InvalidParameter(f"{label} must lie in [0, 1], got {rate}")
        if eta_random + eta_structured > 1.0:
            raise InvalidParameter(
                f"combined missing rate {eta_random + eta_structured} exceeds 1"
            )
        if int(block_length) < 1:
            raise InvalidParameter(f"block_length must be at least 1, got {block_length}")
        return super().__new__(
            cls,
            scenario,
            eta_random,
            eta_structured,
            int(block_length),
            target_group,
            int(seed),
            bool(shared_blocks),
        )

    @property
    def eta(self) -> float:
        return self.eta_random + self.eta_structured


def target_rows(n_channels: int, channel_groups: Optional[Sequence[str]], group: Optional[str]):
    if group is None:
        return np.arange(n_channels)
    if channel_groups is None or len(channel_groups) != n_channels:
        raise ShapeError(f"selecting group {group!r} needs one group label per channel")
    rows = np.flatnonzero([label == group for label in channel_groups])
    if not rows.size:
        raise InvalidParameter(f"no channel belongs to group {group!r}")
    return rows


def _block_starts(n_blocks: int, length: int, n_columns: int, rng: RandomSource) -> np.ndarray:
    """Uniform placement of ``n_blocks`` disjoint blocks inside ``[0, n_columns)``."""
    slots = n_columns - n_blocks * (length - 1)
    chosen = np.sort(rng.generator.choice(slots, size=n_blocks, replace=False))
    return chosen + np.arange(n_blocks) * (length - 1)


def _structured(spec: MissingSpec, rows: np.ndarray, mask: np.ndarray, rng: RandomSource):
    n_columns = mask.shape[1]
    length = spec.block_length
    n_blocks = int(round(spec.eta_structured * n_columns / length))
    if spec.eta_structured > 0 and not n_blocks:
        raise InfeasibleSpec(
            f"structured rate {spec.eta_structured:g} is below one block of {length} "
            f"columns out of {n_columns}"
        )
    if n_blocks * length > n_columns:
        raise InfeasibleSpec(
            f"{n_blocks} blocks of {length} columns do not fit in {n_columns} columns"
        )
    if not n_blocks:
        return
    shared = None
    if spec.shared_blocks:
        shared = _block_starts(n_blocks, length, n_columns, rng.child(0))
    for row in rows:
        starts = shared if shared is not None else _block_starts(
            n_blocks, length, n_columns, rng.child(int(row))
        )
        for start in starts:
            mask[row, start : start + length] = False


def generate_mask(
    spec: MissingSpec,
    n_channels: int,
    n_columns: int,
    channel_groups: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """
    Boolean ``n_channels x n_columns`` mask for ``spec``.

    RM drops exactly ``round(eta_random * N)`` of the ``N`` target cells. SM drops
    ``round(eta_structured * T / L)`` disjoint blocks of ``L`` columns in each target row. MM
    applies SM, then drops random cells until ``round(eta * N)`` target cells are missing.
    Rows outside ``spec.target_group`` are never masked.
    """
    if n_channels < 1 or n_columns < 1:
        raise ShapeError(f"mask needs a non-empty shape, got {n_channels} x {n_columns}")
    rows = target_rows(n_channels, channel_groups, spec.target_group)
    rng = RandomSource(spec.seed)
    mask = np.ones((n_channels, n_columns), dtype=bool)
    n_target = rows.size * n_columns

    if spec.scenario in (Scenario.SM, Scenario.MM):
        _structured(spec, rows, mask, rng.child(STRUCTURED_STREAM))

    if spec.scenario is Scenario.RM:
        n_random = int(round(spec.eta_random * n_target))
    elif spec.scenario is Scenario.MM:
        dropped = n_target - int(mask[rows].sum())
        n_random = max(0, int(round(spec.eta * n_target)) - dropped)
    else:
        n_random = 0

    if n_random:
        candidates = np.flatnonzero(mask[rows])
        if n_random > candidates.size:
            raise InfeasibleSpec(
                f"{n_random} random drops requested but only {candidates.size} cells remain"
            )
        picked = rng.child(RANDOM_STREAM).generator.choice(candidates, size=n_random, replace=False)
        picked_rows, picked_columns = np.divmod(picked, n_columns)
        mask[rows[picked_rows], picked_columns] = False

    logger.debug(
        f"Generated {spec.scenario.value} mask",
        extra={
            "data": {
                "event": "scenarios.mask",
                "scenario": spec.scenario.value,
                "target_cells": n_target,
                "missing": int(n_target - mask[rows].sum()),
            }
        },
    )
    return mask


def accuracy(truth, estimate) -> float:
    """``(1 - RMSE / RMS(truth)) * 100``; negative when worse than predicting zero."""
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    estimate = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if truth.shape != estimate.shape:
        raise ShapeError(f"truth has {truth.size} values but estimate has {estimate.size}")
    if not truth.size:
        raise UndefinedMetric("accuracy over an empty set of positions")
    rms = np.sqrt(np.mean(truth * truth))
    if rms == 0:
        raise UndefinedMetric("accuracy is undefined when the truth is all zero")
    error = truth - estimate
    return float((1.0 - np.sqrt(np.mean(error * error)) / rms) * 100.0)


def accuracy_report(
    truth: np.ndarray,
    estimate: np.ndarray,
    positions: np.ndarray,
    channel_ids: Sequence[str],
) -> dict:
    """
    Overall and per-channel accuracy over ``positions``.

    Every entry records the number of positions used; channels whose accuracy is undefined
    report ``rho: None`` with the reason.
    """
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    positions = np.asarray(positions, dtype=bool)
    if not truth.shape == estimate.shape == positions.shape:
        raise ShapeError(
            f"truth {truth.shape}, estimate {estimate.shape} and positions {positions.shape} differ"
        )
    positions = positions & np.isfinite(truth) & np.isfinite(estimate)
    report = {"overall": _entry(truth[positions], estimate[positions]), "channels": []}
    for row, channel in enumerate(channel_ids):
        selected = positions[row]
        entry = {"channel": channel}
        entry.update(_entry(truth[row, selected], estimate[row, selected]))
        report["channels"].append(entry)
    return report


def _entry(truth, estimate) -> dict:
    entry = {"count": int(truth.size)}
    try:
        entry["rho"] = accuracy(truth, estimate)
    except UndefinedMetric as e:
        entry["rho"] = None
        entry["reason"] = e.message
    return entry
