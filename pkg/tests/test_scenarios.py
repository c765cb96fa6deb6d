import numpy as np
import pytest

from btmfstream import InfeasibleSpec, InvalidParameter, ShapeError, UndefinedMetric
from btmfstream.scenarios import (
    MissingSpec,
    Scenario,
    accuracy,
    accuracy_report,
    generate_mask,
    target_rows,
)


def runs_of_missing(row):
    """(start, length) of every maximal run of False in ``row``."""
    runs, start = [], None
    for index, kept in enumerate(list(row) + [True]):
        if not kept and start is None:
            start = index
        elif kept and start is not None:
            runs.append((start, index - start))
            start = None
    return runs


def test_scenario_parse():
    assert Scenario.parse('mm') is Scenario.MM
    assert Scenario.parse(Scenario.RM) is Scenario.RM
    with pytest.raises(InvalidParameter):
        Scenario.parse('XM')


def test_missing_spec_validation():
    assert MissingSpec('RM', 0.2, 0.5).eta_structured == 0.0
    assert MissingSpec('SM', 0.2, 0.5).eta_random == 0.0
    assert MissingSpec('MM', 0.2, 0.1).eta == pytest.approx(0.3)
    with pytest.raises(InvalidParameter):
        MissingSpec('RM', 1.5)
    with pytest.raises(InvalidParameter):
        MissingSpec('MM', 0.6, 0.6)
    with pytest.raises(InvalidParameter):
        MissingSpec('SM', 0.0, 0.2, block_length=0)


def test_random_missing_exact_count():
    mask = generate_mask(MissingSpec('RM', eta_random=0.2, seed=4), 10, 100)
    assert mask.dtype == bool
    assert int((~mask).sum()) == 200


def test_structured_missing_blocks():
    spec = MissingSpec('SM', eta_structured=0.25, block_length=10, seed=1)
    mask = generate_mask(spec, 4, 200)
    for row in mask:
        runs = runs_of_missing(row)
        # adjacent blocks may merge into one run, but the total is whole blocks
        assert sum(length for _, length in runs) == 50
        assert all(length % 10 == 0 for _, length in runs)
        assert all(start + length <= 200 for start, length in runs)


def test_structured_shared_blocks():
    spec = MissingSpec('SM', eta_structured=0.1, block_length=5, seed=2, shared_blocks=True)
    mask = generate_mask(spec, 3, 100)
    assert np.array_equal(mask[0], mask[1]) and np.array_equal(mask[1], mask[2])


def test_structured_infeasible():
    with pytest.raises(InfeasibleSpec):
        generate_mask(MissingSpec('SM', eta_structured=1.0, block_length=144), 2, 100)
    # a rate that rounds to zero blocks cannot be met either
    with pytest.raises(InfeasibleSpec):
        generate_mask(MissingSpec('SM', eta_structured=0.3, block_length=144), 2, 100)
    with pytest.raises(InfeasibleSpec):
        spec = MissingSpec('MM', eta_random=0.1, eta_structured=0.01, block_length=24)
        generate_mask(spec, 2, 400)


def test_mixed_missing_rates():
    for structured, random, expected in ((0.1, 0.2, 0.30), (0.2, 0.3, 0.50)):
        spec = MissingSpec('MM', eta_random=random, eta_structured=structured,
                           block_length=24, seed=7)
        mask = generate_mask(spec, 8, 720)
        fraction = (~mask).sum() / mask.size
        assert abs(fraction - expected) <= 1.0 / mask.size
        # the structured blocks are still there
        assert any(length >= 24 for row in mask for _, length in runs_of_missing(row))


def test_masks_are_reproducible():
    spec = MissingSpec('MM', 0.2, 0.1, block_length=12, seed=3)
    assert np.array_equal(generate_mask(spec, 5, 300), generate_mask(spec, 5, 300))
    other = spec._replace(seed=4)
    assert not np.array_equal(generate_mask(spec, 5, 300), generate_mask(other, 5, 300))


def test_group_targeting():
    groups = ['strain', 'strain', 'temperature', 'strain']
    spec = MissingSpec('RM', eta_random=0.5, target_group='temperature', seed=0)
    mask = generate_mask(spec, 4, 40, groups)
    assert mask[[0, 1, 3]].all()
    assert int((~mask[2]).sum()) == 20
    assert target_rows(4, groups, 'strain').tolist() == [0, 1, 3]
    with pytest.raises(InvalidParameter):
        target_rows(4, groups, 'humidity')
    with pytest.raises(ShapeError):
        target_rows(4, None, 'strain')


def test_accuracy_examples():
    truth = np.array([3.0, 4.0])
    assert accuracy(truth, truth) == 100.0
    assert accuracy(truth, np.zeros(2)) == 0.0
    assert accuracy([1.0, 1.0, 1.0, 1.0], [1.6, 0.4, 1.6, 0.4]) == pytest.approx(40.0)
    assert accuracy([1.0], [4.0]) < 0


def test_accuracy_undefined():
    with pytest.raises(UndefinedMetric):
        accuracy([], [])
    with pytest.raises(UndefinedMetric):
        accuracy([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ShapeError):
        accuracy([1.0, 2.0], [1.0])


def test_accuracy_report():
    truth = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 5.0]])
    estimate = np.array([[1.0, 2.0, 0.0], [1.0, 1.0, 5.0]])
    positions = np.array([[True, True, False], [True, True, False]])
    report = accuracy_report(truth, estimate, positions, ['a', 'b'])
    assert report['overall']['count'] == 4
    assert report['channels'][0] == {'channel': 'a', 'count': 2, 'rho': 100.0}
    assert report['channels'][1]['rho'] is None
    assert 'zero' in report['channels'][1]['reason']

    empty = accuracy_report(truth, estimate, np.zeros_like(positions), ['a', 'b'])
    assert empty['overall']['rho'] is None and empty['overall']['count'] == 0
