"""
Run configuration.

A YAML file of flat dotted keys (``chain.n_iters_impute: 200``); nested mappings are
flattened to the same keys. Values are layered: defaults, then the file, then ``--set``
pairs, then the dedicated command line flags.
"""
import collections
import logging
from typing import Iterable, Mapping, Optional

import yaml

from . import DEFAULT_THREADS, BTMFError, ConfigurationError, parse_lags
from .gibbs import ChainConfig
from .model import PriorConfig

logger = logging.getLogger(__name__)

DEFAULT_INCREMENT = 4320


def _boolean(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _optional_int(value):
    if value is None or str(value).strip().lower() in ("", "none", "null"):
        return None
    return int(value)


def _optional_float(value):
    if value is None or str(value).strip().lower() in ("", "none", "null"):
        return None
    return float(value)


def _precision_window(value):
    value = str(value).strip().lower()
    if value not in ("window", "column"):
        raise ValueError("expected 'window' or 'column'")
    return value


def _optional_str(value):
    return None if value is None else str(value)


# key -> (coercion, default)
SCHEMA = collections.OrderedDict(
    [
        ("model.rank", (int, 8)),
        ("model.lags", (parse_lags, (1, 2))),
        ("chain.n_iters_impute", (int, 200)),
        ("chain.burn_in_impute", (int, 100)),
        ("chain.n_iters_forecast", (int, 20)),
        ("chain.burn_in_forecast", (int, 10)),
        ("chain.seed", (int, 0)),
        ("chain.log_every", (int, 50)),
        ("window.increment", (int, DEFAULT_INCREMENT)),
        ("window.critical", (int, 12 * DEFAULT_INCREMENT)),
        ("forecast.horizon", (_optional_int, None)),
        ("forecast.refresh_interval", (_optional_int, None)),
        ("forecast.observed_only", (_boolean, True)),
        ("forecast.precision_window", (_precision_window, "window")),
        ("prior.beta0", (float, 1.0)),
        ("prior.v0", (_optional_float, None)),
        ("prior.a0", (float, 1e-6)),
        ("prior.b0", (float, 1e-6)),
        ("prior.mu0", (float, 0.0)),
        ("prior.w0_scale", (float, 1.0)),
        ("prior.v0_scale", (float, 1.0)),
        ("prior.psi0_scale", (float, 1.0)),
        ("runtime.threads", (_optional_int, None)),
        ("paths.input", (_optional_str, None)),
        ("paths.output", (_optional_str, None)),
    ]
)


class RunConfig(
    collections.namedtuple(
        "RunConfig",
        [
            "rank",
            "lags",
            "chain",
            "increment",
            "critical",
            "horizon",
            "refresh_interval",
            "observed_only",
            "precision_window",
            "prior_overrides",
            "input",
            "output",
        ],
    )
):
    __slots__ = ()

    @property
    def threads(self) -> int:
        return self.chain.threads

    def prior(self) -> PriorConfig:
        return PriorConfig.default(self.rank, len(self.lags), **self.prior_overrides)

    @classmethod
    def from_flat(cls, values: Mapping[str, object]) -> "RunConfig":
        settings = dict(defaults())
        for key, value in values.items():
            settings[key] = coerce(key, value)
        rank = settings["model.rank"]
        if rank < 1:
            raise ConfigurationError(f"model.rank must be at least 1, got {rank}")
        increment = settings["window.increment"]
        threads = settings["runtime.threads"]
        try:
            chain = ChainConfig(
                settings["chain.n_iters_impute"],
                settings["chain.burn_in_impute"],
                settings["chain.n_iters_forecast"],
                settings["chain.burn_in_forecast"],
                settings["chain.seed"],
                DEFAULT_THREADS if threads is None else threads,
                settings["chain.log_every"],
            )
        except BTMFError as e:
            raise ConfigurationError(e.message) from e
        prior_overrides = {
            key.partition(".")[2]: value
            for key, value in settings.items()
            if key.startswith("prior.") and not (key == "prior.v0" and value is None)
        }
        config = cls(
            rank,
            settings["model.lags"],
            chain,
            increment,
            settings["window.critical"],
            settings["forecast.horizon"] or increment,
            settings["forecast.refresh_interval"] or increment,
            settings["forecast.observed_only"],
            settings["forecast.precision_window"],
            prior_overrides,
            settings["paths.input"],
            settings["paths.output"],
        )
        try:
            config.prior()
        except BTMFError as e:
            raise ConfigurationError(f"invalid prior: {e.message}") from e
        return config


def defaults():
    return collections.OrderedDict((key, default) for key, (_, default) in SCHEMA.items())


def coerce(key: str, value):
    try:
        convert, _ = SCHEMA[key]
    except KeyError:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    try:
        return convert(value)
    except ConfigurationError as e:
        raise ConfigurationError(f"{key}: {e.message}") from e
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"{key}: cannot use {value!r} ({e})") from e


def flatten(mapping: Mapping, prefix: str = "") -> dict:
    flat = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def parse_assignments(pairs: Iterable[str]) -> dict:
    """``["chain.seed=3", ...]`` -> ``{"chain.seed": "3"}``."""
    assignments = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"expected KEY=VALUE, got {pair!r}")
        assignments[key.strip()] = yaml.safe_load(value) if value.strip() else None
    return assignments


def read_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as handle:
            document = yaml.safe_load(handle)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e.strerror}")
    except yaml.YAMLError as e:
        raise ConfigurationError(f"config {path} is not valid YAML: {e}")
    if document is None:
        return {}
    if not isinstance(document, Mapping):
        raise ConfigurationError(f"config {path} must hold a mapping of keys")
    return flatten(document)


def load_config(
    path: Optional[str] = None,
    assignments: Iterable[str] = (),
    flags: Optional[Mapping[str, object]] = None,
) -> RunConfig:
    """Layer the config file, ``--set`` assignments and flags (``None`` flags are skipped)."""
    values = {}
    if path:
        values.update(read_config_file(path))
    values.update(parse_assignments(assignments))
    values.update({key: value for key, value in (flags or {}).items() if value is not None})
    config = RunConfig.from_flat(values)
    logger.debug(
        "Resolved configuration",
        extra={"data": {"event": "config.loaded", "source": path, "keys": sorted(values)}},
    )
    return config
