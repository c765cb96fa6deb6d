"""
Matrix file format.

::

    2021-03-01T00:00:00,600
    channel,group,0,1,2,...
    S01,strain,1.25,,0.5,...
    T01,temperature,12.0,NaN,11.5,...

Row 1 holds the ISO-8601 timestamp of time index 0 and the sample interval in seconds.
Row 2 holds the integer time index of every column. Each further row is one channel; an empty
cell or ``NaN`` marks an unobserved entry. Values are written with ``repr`` so a write followed
by a read reproduces every float exactly.
"""
import contextlib
import csv
import datetime
import io
import logging
import math
import os
import tempfile
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from . import DataError, ParseError
from .model import ObservationSet, PredictionResult

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset(("", "nan"))
SERIES_COLUMNS = (
    "channel",
    "group",
    "time_index",
    "timestamp",
    "kind",
    "mean",
    "std",
    "lower",
    "upper",
)


@contextlib.contextmanager
def atomic_writer(path: str):
    """
    Text handle whose content replaces ``path`` only once the block exits cleanly.

    Filesystem failures surface as :class:`DataError` naming ``path``.
    """
    directory = os.path.dirname(os.path.abspath(path))
    try:
        handle = tempfile.NamedTemporaryFile(
            "w", dir=directory, prefix=".tmp-", suffix=".part", delete=False, newline=""
        )
    except OSError as e:
        raise DataError(f"cannot write {path}: {e.strerror}") from e
    try:
        with handle:
            yield handle
        os.replace(handle.name, path)
    except BaseException as e:
        with contextlib.suppress(OSError):
            os.unlink(handle.name)
        if isinstance(e, OSError):
            raise DataError(f"cannot write {path}: {e.strerror}") from e
        raise


def _parse_header(row, line):
    if len(row) != 2:
        raise ParseError("expected '<ISO start>,<interval seconds>'", line=line)
    try:
        start = datetime.datetime.fromisoformat(row[0].strip())
    except ValueError:
        raise ParseError(f"bad timestamp {row[0]!r}", line=line, column=1)
    try:
        seconds = float(row[1])
    except ValueError:
        raise ParseError(f"bad interval {row[1]!r}", line=line, column=2)
    if not (math.isfinite(seconds) and seconds > 0):
        raise ParseError(f"interval must be positive, got {row[1]!r}", line=line, column=2)
    return start, datetime.timedelta(seconds=seconds)


def _parse_time_index(row, line):
    if len(row) < 3 or [cell.strip() for cell in row[:2]] != ["channel", "group"]:
        raise ParseError("expected 'channel,group,<time indices>'", line=line)
    index = np.empty(len(row) - 2, dtype=np.int64)
    for offset, cell in enumerate(row[2:]):
        try:
            index[offset] = int(cell, 10)
        except ValueError:
            raise ParseError(f"bad time index {cell!r}", line=line, column=offset + 3)
    return index


def _locate_bad_value(cells, line):
    for offset, cell in enumerate(cells):
        token = cell.strip()
        if token.lower() in MISSING_TOKENS:
            continue
        try:
            value = float(token)
        except ValueError:
            raise ParseError(f"bad value {cell!r}", line=line, column=offset + 3)
        if not math.isfinite(value):
            raise ParseError(f"non-finite value {cell!r}", line=line, column=offset + 3)
    raise ParseError("unreadable values", line=line)


def _parse_values(cells, line) -> Tuple[np.ndarray, np.ndarray]:
    """Whole-row conversion; the per-cell scan only runs to report a bad cell."""
    tokens = np.char.strip(np.asarray(cells, dtype=str))
    mask = ~np.isin(np.char.lower(tokens), sorted(MISSING_TOKENS))
    try:
        values = np.where(mask, tokens, "nan").astype(np.float64)
    except ValueError:
        _locate_bad_value(cells, line)
    if not np.all(np.isfinite(values[mask])):
        _locate_bad_value(cells, line)
    return values, mask


def read_matrix(handle: Iterable[str]) -> ObservationSet:
    reader = csv.reader(handle)
    try:
        start, interval = _parse_header(next(reader), 1)
        time_index = _parse_time_index(next(reader), 2)
    except StopIteration:
        raise ParseError("missing header rows", line=1)
    columns = time_index.size
    ids, groups, rows, masks = [], [], [], []
    seen = set()
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != columns + 2:
            raise ParseError(
                f"expected {columns + 2} cells, found {len(row)}",
                line=line,
                column=min(len(row), columns + 2) + 1,
            )
        channel = row[0].strip()
        if not channel:
            raise ParseError("empty channel id", line=line, column=1)
        if channel in seen:
            raise ParseError(f"duplicate channel id {channel!r}", line=line, column=1)
        seen.add(channel)
        values, mask = _parse_values(row[2:], line)
        ids.append(channel)
        groups.append(row[1].strip())
        rows.append(values)
        masks.append(mask)
    if not rows:
        raise ParseError("no channel rows", line=3)
    return ObservationSet(
        np.vstack(rows), np.vstack(masks), ids, groups, interval, start, time_index
    )


def load_matrix(path: str) -> ObservationSet:
    try:
        with open(path, "r", newline="") as handle:
            obs = read_matrix(handle)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}")
    except ParseError as e:
        raise e.annotate(path) from e
    logger.debug(
        f"Loaded {path}",
        extra={
            "data": {
                "event": "matrixio.load",
                "path": path,
                "shape": list(obs.shape),
                "observed": obs.n_observed,
            }
        },
    )
    return obs


def _interval_text(interval: datetime.timedelta) -> str:
    seconds = interval.total_seconds()
    return str(int(seconds)) if seconds.is_integer() else repr(seconds)


def _cell(value: float, observed: bool) -> str:
    return repr(float(value)) if observed else ""


def dump_matrix(obs: ObservationSet, handle):
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow([obs.start_timestamp.isoformat(), _interval_text(obs.sample_interval)])
    writer.writerow(["channel", "group"] + [str(int(index)) for index in obs.time_index])
    for row, (channel, group) in enumerate(zip(obs.channel_ids, obs.channel_groups)):
        cells = [_cell(value, seen) for value, seen in zip(obs.values[row], obs.mask[row])]
        writer.writerow([channel, group] + cells)


def write_matrix(path: str, obs: ObservationSet) -> str:
    with atomic_writer(path) as handle:
        dump_matrix(obs, handle)
    return path


def matrix_like(
    template: ObservationSet,
    values: np.ndarray,
    time_index: Optional[Sequence[int]] = None,
    mask: Optional[np.ndarray] = None,
) -> ObservationSet:
    """Values laid out with ``template``'s channels and clock; NaN cells become unobserved."""
    values = np.asarray(values, dtype=np.float64)
    if time_index is None:
        time_index = template.time_index
    if mask is None:
        mask = np.isfinite(values)
    return ObservationSet(
        values,
        mask,
        template.channel_ids,
        template.channel_groups,
        template.sample_interval,
        template.start_timestamp,
        time_index,
    )


def mask_matrix(template: ObservationSet, mask: np.ndarray) -> ObservationSet:
    """0/1 matrix of ``mask``; every cell is written."""
    return matrix_like(template, np.asarray(mask, dtype=np.float64))


def load_mask(path: str) -> np.ndarray:
    obs = load_matrix(path)
    values = obs.observed()
    if not np.all(obs.mask) or not np.all((values == 0) | (values == 1)):
        raise DataError(f"{path} is not a 0/1 mask matrix")
    return values.astype(bool)


def write_prediction(
    prefix: str, template: ObservationSet, result: PredictionResult, band: bool = False
) -> Tuple[str, ...]:
    """``PREFIX.mean.csv`` and ``PREFIX.std.csv`` (plus ``.lower``/``.upper`` with ``band``)."""
    outputs = [("mean", result.mean), ("std", result.std)]
    if band:
        lower, upper = result.band()
        outputs += [("lower", lower), ("upper", upper)]
    paths = []
    for name, values in outputs:
        path = f"{prefix}.{name}.csv"
        write_matrix(path, matrix_like(template, values, result.time_index))
        paths.append(path)
    return tuple(paths)


def series_frame(
    template: ObservationSet, results: Sequence[PredictionResult], width: float = 3.0
) -> pd.DataFrame:
    """Long format, one row per (channel, time index, kind)."""
    frames = []
    for result in results:
        lower, upper = result.band(width)
        n_channels, n_columns = result.mean.shape
        stamps = [template.timestamp(index).isoformat() for index in result.time_index]
        frames.append(
            pd.DataFrame(
                {
                    "channel": np.repeat(template.channel_ids, n_columns),
                    "group": np.repeat(template.channel_groups, n_columns),
                    "time_index": np.tile(result.time_index, n_channels),
                    "timestamp": np.tile(stamps, n_channels),
                    "kind": result.kind.value,
                    "mean": result.mean.reshape(-1),
                    "std": result.std.reshape(-1),
                    "lower": lower.reshape(-1),
                    "upper": upper.reshape(-1),
                },
                columns=SERIES_COLUMNS,
            )
        )
    if not frames:
        return pd.DataFrame(columns=SERIES_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def write_frame(path: str, frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, na_rep="", lineterminator="\n")
    with atomic_writer(path) as handle:
        handle.write(buffer.getvalue())
    return path


def write_series(
    path: str, template: ObservationSet, results: Sequence[PredictionResult], width: float = 3.0
) -> str:
    return write_frame(path, series_frame(template, results, width))


def write_report(path: str, report: dict) -> str:
    with atomic_writer(path) as handle:
        yaml.safe_dump(report, handle, default_flow_style=False, sort_keys=False)
    return path
