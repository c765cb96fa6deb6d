import numpy as np
import pytest

from btmfstream import ConfigurationError, DecompositionError, ShapeError
from btmfstream import incremental
from btmfstream.forecast import rolling_forecast
from btmfstream.gibbs import FORECAST_STREAM, ChainConfig, impute
from btmfstream.incremental import (
    ImputationAccumulator,
    Stage,
    plan_windows,
    run_incremental,
    warm_start,
)
from btmfstream.kernels import RandomSource
from btmfstream.model import FactorState, Kind, PredictionResult, PriorConfig
from btmfstream.synth import SYNTH_LAGS, synthesize

CHAIN = ChainConfig(
    n_iters_impute=8, burn_in_impute=4, n_iters_forecast=4, burn_in_forecast=2, log_every=0
)


@pytest.fixture(scope='module')
def planted():
    return synthesize(n_channels=6, n_columns=60, rank=2, noise=0.01, seed=8)


def test_plan_examples():
    plan = plan_windows(30, 10, 20)
    assert plan.windows == ((0, 10), (0, 20), (10, 30))
    assert plan.stages == (Stage.DYNAMIC, Stage.DYNAMIC, Stage.FIXED)
    assert [window for window, _ in plan] == list(plan.windows)

    single = plan_windows(10, 10, 10)
    assert single.windows == ((0, 10),)
    assert single.stages == (Stage.DYNAMIC,)

    plan = plan_windows(4320 * 14, 4320, 12 * 4320)
    assert len(plan) == 14
    assert plan.windows[11] == (0, 12 * 4320)
    assert plan.windows[13] == (2 * 4320, 14 * 4320)


def test_plan_trailing_partial_window():
    plan = plan_windows(25, 10, 20)
    assert plan.windows == ((0, 10), (0, 20), (5, 25))
    assert plan.forecast_range(1, 10) == (20, 25)
    assert plan.forecast_range(2, 10) == (25, 35)
    assert plan.coverage().tolist() == [2] * 5 + [3] * 15 + [1] * 5
    # the tail stays in the dynamic stage until the critical length is reached
    assert plan_windows(25, 10, 30).windows == ((0, 10), (0, 20), (0, 25))


def test_trailing_window_keeps_critical_length(planted):
    plan = plan_windows(41, 20, 20)
    assert plan.windows == ((0, 20), (20, 40), (21, 41))
    prior = PriorConfig.default(2, len(SYNTH_LAGS))
    obs = planted.obs.window(0, 41)
    outcome = run_incremental(obs, plan, prior, SYNTH_LAGS, CHAIN, RandomSource(0))
    assert [(window.start, window.end) for window in outcome.windows] == list(plan.windows)
    assert not np.isnan(outcome.imputation.mean).any()
    assert outcome.forecast.time_index.tolist() == list(range(20, 61))


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        plan_windows(30, 10, 25)
    with pytest.raises(ConfigurationError):
        plan_windows(30, 0, 20)
    with pytest.raises(ConfigurationError):
        plan_windows(5, 10, 20)
    with pytest.raises(ConfigurationError):
        plan_windows(30, 10, 0)


def test_plan_coverage():
    plan = plan_windows(20, 10, 20)
    assert plan.coverage().tolist() == [2] * 10 + [1] * 10
    plan = plan_windows(40, 10, 20)
    assert plan.coverage().tolist() == [2] * 30 + [1] * 10


def test_accumulator_merges_entrywise():
    accumulator = ImputationAccumulator(1, 4)
    accumulator.add(0, PredictionResult([[1.0, 2.0]], [[3.0, 0.0]], 5, Kind.IMPUTATION))
    accumulator.add(1, PredictionResult([[4.0, 6.0]], [[4.0, 1.0]], 5, Kind.IMPUTATION))
    result = accumulator.result()
    assert result.mean[0, :3].tolist() == [1.0, 3.0, 6.0]
    assert np.isnan(result.mean[0, 3]) and np.isnan(result.std[0, 3])
    assert result.std[0, 1] == pytest.approx(np.sqrt(8.0))
    assert accumulator.count.tolist() == [[1, 2, 1, 0]]
    with pytest.raises(ShapeError):
        accumulator.add(3, PredictionResult([[1.0, 1.0]], [[0.0, 0.0]], 1, Kind.IMPUTATION))


def test_warm_start():
    fresh = FactorState(np.zeros((2, 3)), np.zeros((2, 4)), 1.0)
    assert warm_start(None, Stage.DYNAMIC, 0, fresh) is fresh

    previous = FactorState(np.ones((2, 3)), np.arange(8.0).reshape(2, 4), 7.0)
    dynamic = warm_start((0, previous), Stage.DYNAMIC, 0, fresh)
    assert np.array_equal(dynamic.U, previous.U)
    assert np.array_equal(dynamic.X, fresh.X)
    assert dynamic.tau_eps == 7.0

    fixed = warm_start((0, previous), Stage.FIXED, 2, fresh)
    assert fixed.X.tolist() == [[2.0, 3.0, 0.0, 0.0], [6.0, 7.0, 0.0, 0.0]]
    assert np.array_equal(fixed.U, previous.U)


def test_first_window_matches_standalone_chain(planted):
    obs = planted.obs
    prior = PriorConfig.default(2, len(SYNTH_LAGS))
    rng = RandomSource(CHAIN.seed)
    plan = plan_windows(obs.n_columns, obs.n_columns, obs.n_columns)
    outcome = run_incremental(obs, plan, prior, SYNTH_LAGS, CHAIN, rng, horizon=5)

    direct = impute(obs, 2, SYNTH_LAGS, CHAIN, prior, rng)
    assert np.array_equal(outcome.imputation.mean, direct.prediction.mean)
    assert np.allclose(outcome.imputation.std, direct.prediction.std, rtol=1e-15, atol=0)

    forecast = rolling_forecast(
        None, direct.factors, direct.ar, 5, plan.increment, CHAIN,
        rng.child(0).child(FORECAST_STREAM), history=obs, prior=prior,
    )
    assert np.array_equal(outcome.forecast.mean, forecast.mean)
    assert outcome.forecast.time_index.tolist() == list(range(60, 65))


def test_incremental_run_layout(planted):
    obs = planted.obs
    prior = PriorConfig.default(2, len(SYNTH_LAGS))
    plan = plan_windows(obs.n_columns, 20, 40)
    outcome = run_incremental(obs, plan, prior, SYNTH_LAGS, CHAIN, RandomSource(1))
    assert [window.stage for window in outcome.windows] == [
        Stage.DYNAMIC, Stage.DYNAMIC, Stage.FIXED,
    ]
    assert np.array_equal(outcome.coverage[0], plan.coverage())
    assert np.all(np.isfinite(outcome.imputation.mean))
    # every window forecasts the next I columns and the last one runs past the data
    assert outcome.forecast.time_index.tolist() == list(range(20, 80))
    assert outcome.forecast.mean.shape == (6, 60)
    assert all(window.elapsed >= 0 for window in outcome.windows)


def test_incremental_is_deterministic(planted):
    obs = planted.obs.with_mask(np.random.default_rng(2).random(planted.obs.shape) < 0.8)
    prior = PriorConfig.default(2, len(SYNTH_LAGS))
    plan = plan_windows(obs.n_columns, 20, 20)
    first = run_incremental(obs, plan, prior, SYNTH_LAGS, CHAIN, RandomSource(3))
    second = run_incremental(obs, plan, prior, SYNTH_LAGS, CHAIN, RandomSource(3))
    assert np.array_equal(first.imputation.mean, second.imputation.mean)
    assert np.array_equal(first.forecast.mean, second.forecast.mean)


def test_incremental_annotates_window(planted, monkeypatch):
    calls = []

    def failing(*args, **kwargs):
        calls.append(1)
        raise DecompositionError('not positive definite', matrix='Sigma')

    monkeypatch.setattr(incremental, 'rolling_forecast', failing)
    prior = PriorConfig.default(2, len(SYNTH_LAGS))
    plan = plan_windows(60, 20, 40)
    with pytest.raises(DecompositionError) as excinfo:
        run_incremental(planted.obs, plan, prior, SYNTH_LAGS, CHAIN, RandomSource(0))
    assert str(excinfo.value) == 'window 0: not positive definite'
    assert calls == [1]


def test_incremental_plan_must_cover_observations(planted):
    prior = PriorConfig.default(2, len(SYNTH_LAGS))
    with pytest.raises(ShapeError):
        run_incremental(
            planted.obs, plan_windows(40, 20, 40), prior, SYNTH_LAGS, CHAIN, RandomSource(0)
        )
