import numpy as np
import pytest

from dualtune.model import Method, RunRecord
from dualtune.statistics import StatisticHandler


def record(method: Method, seed: int, val: float, test: float = 1.0, status: str = 'converged') -> RunRecord:
    return RunRecord(method=method, seed=seed, time_s=1.0, val_err=val, test_err=test, iters=3, status=status)


def test_collect_statistics_of_method():
    data = [
        record(Method.LDMMA, 0, 1.0, 2.0),
        record(Method.LDMMA, 1, 3.0, 4.0),
        record(Method.GRID, 0, 10.0, 10.0, 'completed')
    ]

    handler = StatisticHandler()
    result = handler.collect(Method.LDMMA, data)

    assert result.runs == 2
    assert result.successes == 2
    assert result.val_mean == pytest.approx(2.0)
    assert result.val_std == pytest.approx(1.0)
    assert result.test_mean == pytest.approx(3.0)
    assert result.time_std == 0.0


def test_single_seed_has_zero_std():
    handler = StatisticHandler()

    result = handler.collect(Method.GRID, [record(Method.GRID, 0, 0.5, status='completed')])

    assert result.val_mean == 0.5
    assert result.val_std == 0.0
    assert result.coverage == 1.0


def test_failed_runs_are_excluded():
    data = [record(Method.LDMMA, 0, 1.0), record(Method.LDMMA, 1, np.inf, np.inf, 'aborted')]

    handler = StatisticHandler()
    result = handler.collect(Method.LDMMA, data)

    assert result.runs == 2
    assert result.successes == 1
    assert result.coverage == 0.5
    assert result.val_mean == 1.0


def test_no_success_gives_nan():
    handler = StatisticHandler()

    result = handler.collect(Method.RANDOM, [record(Method.RANDOM, 0, np.inf, status='failed')])

    assert np.isnan(result.val_mean)
    assert result.coverage == 0.0


def test_aggregate_keeps_method_order():
    data = [record(Method.GRID, 0, 1.0, status='completed'), record(Method.LDMMA, 0, 0.5), record(Method.GRID, 1, 2.0)]

    result = StatisticHandler().aggregate(data)

    assert [stats.method for stats in result] == [Method.GRID, Method.LDMMA]


def test_wins_counts_strictly_better_seeds():
    data = [
        record(Method.LDMMA, 0, 1.0),
        record(Method.LDMMA, 1, 2.0),
        record(Method.LDMMA, 2, 1.0),
        record(Method.GRID, 0, 1.5, status='completed'),
        record(Method.GRID, 1, 2.0, status='completed'),
        record(Method.GRID, 2, 0.5, status='completed')
    ]

    result = StatisticHandler.wins(data, Method.LDMMA, Method.GRID)

    assert result == (1, 3)
