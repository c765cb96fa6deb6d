import argparse
import logging
import sys

import numpy as np
import yaml

from . import DEFAULT_STDOUT_FORMAT, BTMFError, DataError, UsageError, parse_lags
from .config import load_config
from .forecast import rolling_forecast
from .gibbs import FORECAST_STREAM, impute
from .incremental import plan_windows, run_incremental
from .kernels import RandomSource
from .matrixio import (
    load_mask,
    load_matrix,
    mask_matrix,
    write_frame,
    write_matrix,
    write_prediction,
    write_report,
    write_series,
)
from .scenarios import MissingSpec, accuracy_report, generate_mask, target_rows
from .sweep import run_sweep
from .synth import synthesize

logger = logging.getLogger("btmfstream")


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text):
    return tuple(float(item) for item in text.split(",") if item.strip())


def _int_list(text):
    return tuple(int(item, 10) for item in text.split(",") if item.strip())


def _string_list(text):
    return tuple(item.strip() for item in text.split(",") if item.strip())


def build_parser():
    parser = ArgumentParser(prog="btmfstream")
    parser.add_argument("-d", "--debug", action="store_true", default=False)
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration key, e.g. chain.seed=3",
    )
    parser.add_argument("--threads", type=int, help="worker threads for per-channel draws")
    parser.add_argument("--rank", type=int)
    parser.add_argument("--lags", type=parse_lags, help="comma separated lags, e.g. 1,2,144")
    parser.add_argument("--seed", type=int)

    subparsers = parser.add_subparsers(dest="command")

    synth_parser = subparsers.add_parser("synth", help="write a planted low-rank AR dataset")
    synth_parser.add_argument("-o", "--output", required=True)
    synth_parser.add_argument("--channels", type=int, default=20)
    synth_parser.add_argument("--columns", type=int, default=2000)
    synth_parser.add_argument("--rank", type=int, default=4, dest="planted_rank")
    synth_parser.add_argument("--noise", type=float, default=0.0, help="relative to signal RMS")
    synth_parser.add_argument("--innovation", type=float, default=0.0)

    mask_parser = subparsers.add_parser("mask", help="apply a missing scenario")
    mask_parser.add_argument("input")
    mask_parser.add_argument("-o", "--output", required=True, help="output prefix")
    mask_parser.add_argument("--scenario", required=True, choices=("RM", "SM", "MM"))
    mask_parser.add_argument("--eta-random", type=float, default=0.0, dest="eta_random")
    mask_parser.add_argument("--eta-structured", type=float, default=0.0, dest="eta_structured")
    mask_parser.add_argument("--block-length", type=int, default=144, dest="block_length")
    mask_parser.add_argument("--group", help="only mask channels of this group")
    mask_parser.add_argument("--shared-blocks", action="store_true", dest="shared_blocks")

    impute_parser = subparsers.add_parser("impute", help="single window imputation chain")
    impute_parser.add_argument("input", nargs="?")
    impute_parser.add_argument("-o", "--output", help="output prefix")
    impute_parser.add_argument("--band", action="store_true", help="also write +/-3 std bands")

    forecast_parser = subparsers.add_parser("forecast", help="impute then roll a forecast")
    forecast_parser.add_argument("input", nargs="?")
    forecast_parser.add_argument("-o", "--output", help="output prefix")
    forecast_parser.add_argument("--split", type=int, required=True, help="first forecast column")
    forecast_parser.add_argument("--horizon", type=int)
    forecast_parser.add_argument("--band", action="store_true")
    forecast_parser.add_argument("--truth", help="complete matrix to score the imputation against")

    run_parser = subparsers.add_parser("run", help="incremental imputation and forecasting")
    run_parser.add_argument("input", nargs="?")
    run_parser.add_argument("-o", "--output", help="output prefix")
    run_parser.add_argument("--window", type=int, help="window increment I in columns")
    run_parser.add_argument("--critical", type=int, help="critical length T1 in columns")
    run_parser.add_argument("--horizon", type=int)
    run_parser.add_argument("--band", action="store_true")
    run_parser.add_argument("--truth", help="complete matrix to score the imputation against")

    eval_parser = subparsers.add_parser("eval", help="accuracy of an estimate against truth")
    eval_parser.add_argument("--truth", required=True)
    eval_parser.add_argument("--estimate", required=True)
    eval_parser.add_argument("--mask", help="0/1 mask; only cells with 0 are evaluated")
    eval_parser.add_argument("-o", "--output", help="write the report as YAML")

    sweep_parser = subparsers.add_parser("sweep", help="accuracy table over ranks and rates")
    sweep_parser.add_argument("input")
    sweep_parser.add_argument("-o", "--output", required=True)
    sweep_parser.add_argument("--ranks", type=_int_list, default=(4, 8, 12))
    sweep_parser.add_argument("--scenarios", type=_string_list, default=("RM", "SM"))
    sweep_parser.add_argument("--rates", type=_float_list, default=(0.1, 0.3, 0.5))
    sweep_parser.add_argument("--split", type=int)
    sweep_parser.add_argument("--block-length", type=int, default=144, dest="block_length")
    sweep_parser.add_argument("--group")
    for subparser in subparsers.choices.values():
        subparser.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    return parser


def resolve_config(args):
    flags = {
        "model.rank": args.rank,
        "model.lags": args.lags,
        "chain.seed": args.seed,
        "runtime.threads": args.threads,
        "window.increment": getattr(args, "window", None),
        "window.critical": getattr(args, "critical", None),
        "forecast.horizon": getattr(args, "horizon", None),
        "paths.input": getattr(args, "input", None),
        "paths.output": getattr(args, "output", None),
    }
    return load_config(args.config, args.set, flags)


def _required_paths(config):
    if not config.input:
        raise UsageError("an input matrix is required (argument or paths.input)")
    if not config.output:
        raise UsageError("an output prefix is required (-o or paths.output)")
    return config.input, config.output


def command_synth(args, config):
    planted = synthesize(
        args.channels,
        args.columns,
        args.planted_rank,
        noise=args.noise,
        innovation=args.innovation,
        seed=config.chain.seed,
    )
    write_matrix(args.output, planted.obs)
    logger.info(f"Wrote {planted.obs.shape} planted matrix to {args.output}")
    return 0


def command_mask(args, config):
    obs = load_matrix(args.input)
    spec = MissingSpec(
        args.scenario,
        args.eta_random,
        args.eta_structured,
        args.block_length,
        args.group,
        config.chain.seed,
        args.shared_blocks,
    )
    mask = generate_mask(spec, obs.n_channels, obs.n_columns, obs.channel_groups)
    rows = target_rows(obs.n_channels, obs.channel_groups, spec.target_group)
    write_matrix(f"{args.output}.masked.csv", obs.with_mask(mask))
    write_matrix(f"{args.output}.mask.csv", mask_matrix(obs, mask))
    missing = 1.0 - float(mask[rows].mean())
    print(f"scenario={spec.scenario.value} target_cells={mask[rows].size} missing={missing:.6f}")
    return 0


def command_impute(args, config):
    source, prefix = _required_paths(config)
    obs = load_matrix(source)
    outcome = impute(obs, config.rank, config.lags, config.chain, config.prior())
    write_prediction(prefix, obs, outcome.prediction, band=args.band)
    write_series(f"{prefix}.series.csv", obs, [outcome.prediction])
    logger.info(f"Wrote imputation of {obs.shape} to {prefix}.*")
    return 0


def _align(truth, time_index, label):
    """Columns of ``truth`` holding ``time_index``."""
    columns = np.searchsorted(truth.time_index, time_index)
    if np.any(columns >= truth.n_columns) or np.any(
        truth.time_index[np.minimum(columns, truth.n_columns - 1)] != time_index
    ):
        raise DataError(f"{label} covers time indices that the truth does not hold")
    return columns


def _imputation_report(path, obs, imputation):
    """Accuracy of ``imputation`` at the cells missing from ``obs`` but present in ``path``."""
    truth = load_matrix(path)
    if truth.channel_ids != obs.channel_ids:
        raise DataError("truth and input list different channels")
    truth_columns = _align(truth, imputation.time_index, "imputation")
    input_columns = _align(obs, imputation.time_index, "imputation")
    positions = truth.mask[:, truth_columns] & ~obs.mask[:, input_columns]
    return accuracy_report(
        truth.observed()[:, truth_columns], imputation.mean, positions, truth.channel_ids
    )


def _forecast_report(stream, forecast):
    if stream is None:
        return None
    covered = stream.n_columns
    report = accuracy_report(
        stream.observed(),
        forecast.mean[:, :covered],
        stream.mask,
        stream.channel_ids,
    )
    return report


def command_forecast(args, config):
    source, prefix = _required_paths(config)
    obs = load_matrix(source)
    if not 0 < args.split <= obs.n_columns:
        raise UsageError(f"--split must lie in 1..{obs.n_columns}, got {args.split}")
    history = obs.window(0, args.split)
    stream = obs.window(args.split, obs.n_columns) if args.split < obs.n_columns else None
    horizon = args.horizon or (stream.n_columns if stream is not None else config.horizon)
    prior = config.prior()
    rng = RandomSource(config.chain.seed)
    outcome = impute(history, config.rank, config.lags, config.chain, prior, rng)
    forecast = rolling_forecast(
        stream,
        outcome.factors,
        outcome.ar,
        horizon,
        config.refresh_interval,
        config.chain,
        rng.child(0).child(FORECAST_STREAM),
        history=history,
        prior=prior,
        observed_only=config.observed_only,
        precision_window=config.precision_window,
    )
    write_prediction(f"{prefix}.impute", obs, outcome.prediction, band=args.band)
    write_prediction(f"{prefix}.forecast", obs, forecast, band=args.band)
    write_series(f"{prefix}.series.csv", obs, [outcome.prediction, forecast])
    report = {}
    if args.truth:
        report["imputation"] = _imputation_report(args.truth, obs, outcome.prediction)
    if stream is not None:
        report["forecast"] = _forecast_report(stream, forecast)
    if report:
        write_report(f"{prefix}.report.yml", report)
    return 0


def command_run(args, config):
    source, prefix = _required_paths(config)
    obs = load_matrix(source)
    plan = plan_windows(obs.n_columns, config.increment, config.critical)
    outcome = run_incremental(
        obs,
        plan,
        config.prior(),
        config.lags,
        config.chain,
        RandomSource(config.chain.seed),
        horizon=config.horizon,
        refresh_interval=config.refresh_interval,
        observed_only=config.observed_only,
        precision_window=config.precision_window,
    )
    write_prediction(f"{prefix}.impute", obs, outcome.imputation, band=args.band)
    results = [outcome.imputation]
    report = {
        "windows": [
            {
                "index": window.index,
                "stage": window.stage.value,
                "start": window.start,
                "end": window.end,
                "rmse": window.rmse,
            }
            for window in outcome.windows
        ]
    }
    if outcome.forecast is not None:
        write_prediction(f"{prefix}.forecast", obs, outcome.forecast, band=args.band)
        results.append(outcome.forecast)
        known = outcome.forecast.time_index <= obs.time_index[-1]
        if known.any():
            start = int(np.searchsorted(obs.time_index, outcome.forecast.time_index[0]))
            stream = obs.window(start, obs.n_columns)
            forecast = outcome.forecast._replace(
                mean=outcome.forecast.mean[:, known], std=outcome.forecast.std[:, known]
            )
            report["forecast"] = _forecast_report(stream, forecast)
    if args.truth:
        report["imputation"] = _imputation_report(args.truth, obs, outcome.imputation)
    write_series(f"{prefix}.series.csv", obs, results)
    write_report(f"{prefix}.report.yml", report)
    logger.info(f"Wrote {len(plan)} window run of {obs.shape} to {prefix}.*")
    return 0


def command_eval(args, config):
    truth = load_matrix(args.truth)
    estimate = load_matrix(args.estimate)
    if truth.channel_ids != estimate.channel_ids:
        raise DataError("truth and estimate list different channels")
    columns = _align(truth, estimate.time_index, "estimate")
    positions = truth.mask[:, columns] & estimate.mask
    if args.mask:
        mask = load_mask(args.mask)
        if mask.shape != truth.shape:
            raise DataError(f"mask shape {mask.shape} does not match truth {truth.shape}")
        positions &= ~mask[:, columns]
    report = accuracy_report(
        truth.observed()[:, columns], estimate.observed(), positions, truth.channel_ids
    )
    text = yaml.safe_dump(report, default_flow_style=False, sort_keys=False)
    sys.stdout.write(text)
    if args.output:
        write_report(args.output, report)
    return 0


def command_sweep(args, config):
    truth = load_matrix(args.input)
    table = run_sweep(
        truth,
        args.ranks,
        args.scenarios,
        args.rates,
        config,
        split=args.split,
        block_length=args.block_length,
        target_group=args.group,
    )
    write_frame(args.output, table)
    return 0


COMMANDS = {
    "synth": command_synth,
    "mask": command_mask,
    "impute": command_impute,
    "forecast": command_forecast,
    "run": command_run,
    "eval": command_eval,
    "sweep": command_sweep,
}


def cli_dispatch(argv=None) -> int:
    """Run one command; returns 0 on success or the exit code of the error raised."""
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(DEFAULT_STDOUT_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(logging.INFO)
    try:
        args = build_parser().parse_args(argv)
        if args.debug:
            logger.setLevel(logging.DEBUG)
        if args.command is None:
            raise UsageError("a command is required")
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except BTMFError as e:
        reason = " ".join(str(e.message).split())
        sys.stderr.write(f"error={e.__class__.__name__} code={e.code} reason={reason}\n")
        return e.code
    except SystemExit as e:
        return e.code or 0
    finally:
        logger.removeHandler(handler)


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
