from pathlib import Path

import numpy as np
import pytest

from dualtune import data, experiment, ldmma
from dualtune.data import DatasetError
from dualtune.experiment import Runner
from dualtune.ldmma import Termination
from dualtune.model import ExperimentConfig, Method, ModelKind
from dualtune.settings import Settings
from dualtune.solver import SolverError
from dualtune.statistics import StatisticHandler

from tests import problems

SIZES = {'ntr': 15, 'nval': 8, 'nte': 10, 'p': 15}


def setup() -> Runner:
    return Runner(Settings('tests/settings.ini'))


def elastic_net(**overrides) -> ExperimentConfig:
    values = {'model': ModelKind.ELASTIC_NET, 'sizes': SIZES, 'grid_points': 2, 'max_outer_iters': 3}
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.mark.parametrize("model,sizes,splits", [(ModelKind.ELASTIC_NET, SIZES, ['train', 'val', 'test']),
                                                (ModelKind.SPARSE_GROUP_LASSO, {
                                                    'n': 12,
                                                    'p': 10,
                                                    'groups': 2
                                                }, ['train', 'val', 'test']),
                                                (ModelKind.SVM, {
                                                    'n': 30,
                                                    'p': 3
                                                }, ['cv', 'test'])])
def test_generate_for_each_model(model: ModelKind, sizes: dict, splits: list):
    result = experiment.generate(ExperimentConfig(model=model, sizes=sizes), seed=0)

    assert list(result.splits) == splits


def test_generate_needs_sizes():
    with pytest.raises(DatasetError):
        experiment.generate(ExperimentConfig(model=ModelKind.ELASTIC_NET, sizes={'p': 15}), seed=0)


def test_run_ldmma():
    runner = setup()

    result = runner.run(elastic_net(), Method.LDMMA, seed=0)

    assert result.record.method == Method.LDMMA
    assert result.record.status in (Termination.CONVERGED.value, Termination.MAX_OUTER_ITERS.value)
    assert result.record.iters == result.trajectory.iterations
    assert result.record.iters <= 3
    assert np.isfinite(result.record.test_err)
    assert result.record.time_s > 0.0


def test_run_grid_search():
    runner = setup()

    result = runner.run(elastic_net(), Method.GRID, seed=0)

    assert result.record.status == 'completed'
    assert result.record.iters == 4
    assert result.trajectory is None


def test_run_random_search_uses_config_samples():
    runner = setup()

    result = runner.run(elastic_net(random_samples=3), Method.RANDOM, seed=0)

    assert result.record.iters == 3


def test_solver_failure_aborts_run(monkeypatch):
    runner = setup()

    def failing(*_):
        raise SolverError('ll_solve - conic solve ended with numerical_error', None)

    monkeypatch.setattr(ldmma, 'run', failing)
    result = runner.run(elastic_net(), Method.LDMMA, seed=0)

    assert result.record.status == 'aborted'
    assert result.record.val_err == np.inf
    assert not result.record.succeeded()


def test_bench_keeps_seed_order():
    runner = setup()
    config = elastic_net(methods=[Method.LDMMA, Method.GRID], seeds=[2, 0, 1], jobs=2)

    result = runner.bench(config)

    assert [(o.record.seed, o.record.method) for o in result] == [(2, Method.LDMMA), (2, Method.GRID),
                                                                  (0, Method.LDMMA), (0, Method.GRID),
                                                                  (1, Method.LDMMA), (1, Method.GRID)]


def test_bench_is_reproducible():
    runner = setup()
    config = elastic_net(methods=[Method.LDMMA, Method.RANDOM], random_samples=3, seeds=[0, 1])

    first = runner.bench(config)
    second = runner.bench(config)

    assert [o.record.val_err for o in first] == [o.record.val_err for o in second]
    assert [o.record.test_err for o in first] == [o.record.test_err for o in second]


def test_saved_dataset_is_used_as_is():
    problems.cleanup()
    runner = setup()
    dataset = data.gen_elastic_net(7, 15, 8, 10, 15)
    path = data.save(dataset, problems.out_dir.joinpath('en.npz'))

    result = runner.dataset(elastic_net(dataset=path), seed=3)

    assert result == dataset
    problems.cleanup()


def test_libsvm_dataset_is_split_by_seed():
    problems.cleanup()
    problems.out_dir.mkdir(parents=True)
    path = problems.out_dir.joinpath('small.libsvm')
    path.write_text(''.join(f'{1 if i % 2 else -1} 1:{i} 2:{i % 3}\n' for i in range(24)), encoding='utf-8')
    runner = setup()

    result = runner.dataset(ExperimentConfig(model=ModelKind.SVM, dataset=path), seed=0)

    assert result.splits['cv'].size == 12
    assert result.folds.size == 12
    problems.cleanup()


def test_grid_spec_reads_search_box():
    runner = setup()
    model = problems.identity_elastic_net()

    result = runner.grid_spec(elastic_net(), model)

    assert result.log_low == [-3.0, -3.0]
    assert result.log_high == [1.0, 1.0]
    assert result.points == [2, 2]


def test_output_dir_prefers_configured_results():
    settings = Settings('tests/settings.ini')

    default = experiment.output_dir(ExperimentConfig(model=ModelKind.SVM), settings)
    explicit = experiment.output_dir(ExperimentConfig(model=ModelKind.SVM, output='out'), settings)

    assert default == Path('tests/results')
    assert explicit == Path('out')
    assert experiment.result_name(elastic_net(), Method.GRID, 4) == 'elastic-net_grid_seed4'


def by_method(outcomes: list, method: Method) -> list:
    return [outcome.record for outcome in outcomes if outcome.record.method == method]


@pytest.mark.slow
def test_ldmma_beats_grid_search_on_elastic_net():
    config = ExperimentConfig(model=ModelKind.ELASTIC_NET,
                              sizes={'ntr': 50, 'nval': 20, 'nte': 100, 'p': 60},
                              methods=[Method.LDMMA, Method.GRID],
                              seeds=list(range(10)))

    outcomes = Runner(None).bench(config)

    ldmma_val = [record.val_err for record in by_method(outcomes, Method.LDMMA)]
    grid_val = [record.val_err for record in by_method(outcomes, Method.GRID)]
    wins, compared = StatisticHandler.wins([outcome.record for outcome in outcomes], Method.LDMMA, Method.GRID)
    assert all(record.succeeded() for record in by_method(outcomes, Method.LDMMA))
    assert np.median(ldmma_val) <= np.median(grid_val)
    assert compared == 10
    assert wins >= 7


@pytest.mark.slow
def test_ldmma_test_error_on_sparse_group_lasso():
    config = ExperimentConfig(model=ModelKind.SPARSE_GROUP_LASSO,
                              sizes={'n': 90, 'p': 180, 'groups': 9},
                              methods=[Method.LDMMA, Method.GRID],
                              seeds=list(range(10)))

    outcomes = Runner(None).bench(config)

    ldmma_test = [record.test_err for record in by_method(outcomes, Method.LDMMA)]
    grid_test = [record.test_err for record in by_method(outcomes, Method.GRID)]
    assert np.median(ldmma_test) <= np.median(grid_test)


@pytest.mark.slow
def test_ldmma_validation_hinge_on_svm():
    config = ExperimentConfig(model=ModelKind.SVM,
                              sizes={'n': 100, 'p': 10},
                              methods=[Method.LDMMA, Method.GRID],
                              seeds=list(range(10)),
                              folds=3)

    outcomes = Runner(None).bench(config)

    pairs = zip(by_method(outcomes, Method.LDMMA), by_method(outcomes, Method.GRID))
    assert sum(ldmma_record.val_err <= grid_record.val_err for ldmma_record, grid_record in pairs) >= 7
