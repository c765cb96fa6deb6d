import datetime

import numpy as np
import pytest

from btmfstream import DataError, InsufficientHistory, InvalidParameter, ShapeError
from btmfstream.model import (
    ARModel,
    FactorState,
    Kind,
    ObservationSet,
    PredictionResult,
    PriorConfig,
    RunningMoments,
    ar_mean,
    lagged_design,
    lagged_stack,
    reconstruct,
)


def test_reconstruct_examples():
    assert reconstruct(FactorState([[1, 2]], [[3, 4]])).tolist() == [[3, 4], [6, 8]]
    assert reconstruct(FactorState(np.eye(2), np.eye(2))).tolist() == [[1, 0], [0, 1]]
    U = np.column_stack([[1, 0], [0, 1]])
    X = np.column_stack([[2, 5], [7, -1]])
    assert reconstruct(FactorState(U, X)).tolist() == [[2, 7], [5, -1]]


def test_reconstruct_is_linear_in_each_factor():
    rng = np.random.default_rng(0)
    U, X = rng.normal(size=(3, 4)), rng.normal(size=(3, 6))
    assert np.allclose(
        reconstruct(FactorState(2.5 * U, X)), 2.5 * reconstruct(FactorState(U, X))
    )


def test_factor_state_validation():
    with pytest.raises(ShapeError):
        FactorState(np.ones((2, 3)), np.ones((3, 4)))
    with pytest.raises(InvalidParameter):
        FactorState(np.ones((2, 3)), np.ones((2, 4)), tau_eps=0.0)
    state = FactorState(np.ones((2, 3)), np.ones((2, 4)))
    assert state.K == 2
    with pytest.raises(ShapeError):
        state.check(ObservationSet(np.ones((3, 5))))


def test_ar_mean_examples():
    ar = ARModel((1,), [[0.5]], [[1.0]])
    assert ar_mean(ar, np.array([[2.0, 7.0]]), 1).tolist() == [1.0]

    ar = ARModel((1, 3), [[0.5], [0.25]], [[1.0]])
    X = np.array([[4.0, 9.0, 2.0, 0.0]])
    assert ar_mean(ar, X, 3).tolist() == [2.0]

    ar = ARModel.null((1, 2), 2)
    assert ar_mean(ar, np.ones((2, 5)), 4).tolist() == [0.0, 0.0]


def test_ar_mean_only_reads_lagged_columns():
    rng = np.random.default_rng(1)
    ar = ARModel((1, 3), rng.normal(size=(4, 2)), np.eye(2))
    X = rng.normal(size=(2, 8))
    expected = ar_mean(ar, X, 6)
    perturbed = X.copy()
    perturbed[:, [0, 1, 4, 6, 7]] += 100.0
    assert np.array_equal(ar_mean(ar, perturbed, 6), expected)


def test_ar_mean_needs_history():
    ar = ARModel((1, 3), [[0.5], [0.25]], [[1.0]])
    with pytest.raises(InsufficientHistory):
        ar_mean(ar, np.ones((1, 5)), 2)


def test_lagged_design():
    P, Q = lagged_design(np.array([[1.0, 2.0, 4.0]]), (1,))
    assert P.tolist() == [[2.0], [4.0]]
    assert Q.tolist() == [[1.0], [2.0]]

    X = np.arange(12.0).reshape(2, 6)
    P, Q = lagged_design(X, (1, 3))
    assert P.shape == (3, 2)
    assert Q.shape == (3, 4)
    for row, t in enumerate(range(3, 6)):
        assert np.array_equal(Q[row], lagged_stack(X, (1, 3), t))
    with pytest.raises(InsufficientHistory):
        lagged_design(X[:, :3], (1, 3))


def test_ar_model_validation():
    with pytest.raises(InvalidParameter):
        ARModel((2, 1), np.zeros((2, 1)), [[1.0]])
    with pytest.raises(InvalidParameter):
        ARModel((0,), np.zeros((1, 1)), [[1.0]])
    ar = ARModel((1, 2), np.arange(8.0).reshape(4, 2), np.eye(2))
    assert ar.order == 2 and ar.max_lag == 2 and ar.K == 2
    assert ar.block(1).tolist() == [[4.0, 5.0], [6.0, 7.0]]


def test_observation_set_sentinel():
    values = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    mask = np.array([[1, 0, 1], [1, 1, 0]])
    obs = ObservationSet(values, mask)
    assert obs.mask.dtype == bool
    assert np.isnan(obs.values[0, 1]) and np.isnan(obs.values[1, 2])
    assert obs.observed().tolist() == [[1.0, 0.0, 3.0], [4.0, 5.0, 0.0]]
    assert obs.n_observed == 4
    assert obs.channel_ids == ('ch0', 'ch1')
    assert obs.time_index.tolist() == [0, 1, 2]


def test_observation_set_infers_mask_from_nan():
    obs = ObservationSet([[1.0, np.nan], [np.nan, 2.0]])
    assert obs.mask.tolist() == [[True, False], [False, True]]


def test_observation_set_validation():
    with pytest.raises(DataError):
        ObservationSet([[1.0, np.inf]], [[1, 1]])
    with pytest.raises(DataError):
        ObservationSet([[1.0, 2.0]], [[1, 2]])
    with pytest.raises(ShapeError):
        ObservationSet([[1.0, 2.0]], [[1, 1, 1]])
    with pytest.raises(DataError):
        ObservationSet(np.ones((2, 2)), channel_ids=['a', 'a'])


def test_observation_set_window():
    obs = ObservationSet(
        np.arange(12.0).reshape(2, 6),
        channel_groups=['strain', 'temperature'],
        sample_interval=600,
        start_timestamp=datetime.datetime(2021, 3, 1),
    )
    window = obs.window(2, 5)
    assert window.shape == (2, 3)
    assert window.time_index.tolist() == [2, 3, 4]
    assert window.timestamp(window.time_index[0]) == datetime.datetime(2021, 3, 1, 0, 20)
    assert obs.rows_for_group('temperature') == (1,)
    with pytest.raises(ShapeError):
        obs.window(4, 4)


def test_with_mask_only_removes():
    obs = ObservationSet([[1.0, np.nan, 3.0]])
    masked = obs.with_mask([[True, True, False]])
    assert masked.mask.tolist() == [[True, False, False]]


def test_prior_defaults():
    prior = PriorConfig.default(3, 2)
    assert prior.beta0 == 1.0 and prior.v0 == 3 and prior.a0 == 1e-6 and prior.b0 == 1e-6
    assert np.array_equal(prior.W0, np.eye(3))
    assert prior.Lambda0.shape == (6, 3)
    assert np.array_equal(prior.V0, np.eye(6))
    assert PriorConfig.default(2, 1, psi0_scale=4.0).Psi0.tolist() == [[4.0, 0.0], [0.0, 4.0]]
    with pytest.raises(InvalidParameter):
        PriorConfig.default(3, 1, v0=2.0)
    with pytest.raises(InvalidParameter):
        PriorConfig.default(3, 1, a0=0.0)


def test_running_moments():
    moments = RunningMoments(2)
    moments.push(np.array([1.0, 5.0]))
    assert moments.std.tolist() == [0.0, 0.0]
    result = moments.result(Kind.IMPUTATION)
    assert result.n_samples == 1 and np.all(result.std == 0)
    for sample in ([3.0, 5.0], [5.0, 5.0]):
        moments.push(np.array(sample))
    assert np.allclose(moments.mean, [3.0, 5.0])
    assert np.allclose(moments.std, [np.sqrt(8.0 / 3.0), 0.0])


def test_prediction_result():
    result = PredictionResult([[1.0, 2.0]], [[0.5, 0.0]], 4, 'forecast', [10, 11])
    assert result.kind is Kind.FORECAST
    lower, upper = result.band()
    assert lower.tolist() == [[-0.5, 2.0]]
    assert upper.tolist() == [[2.5, 2.0]]
    with pytest.raises(InvalidParameter):
        PredictionResult([[1.0]], [[0.0]], 0, Kind.IMPUTATION)
