"""This module runs tuning methods on seeded datasets and collects result rows"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from dualtune import baselines, data, ldmma
from dualtune.data import Dataset, DatasetError
from dualtune.ldmma import Trajectory
from dualtune.model import ExperimentConfig, GridSpec, Method, ModelKind, RunRecord
from dualtune.models import BilevelModel, from_dataset
from dualtune.settings import Settings, run_config_from, solver_settings_from
from dualtune.solver import SolverError

DEFAULT_LOG_LOW = -5.0
DEFAULT_LOG_HIGH = 2.0


class Outcome(NamedTuple):
    """Result row of one method on one seed, with the trajectory of majorization-minimization runs."""

    record: RunRecord
    trajectory: Optional[Trajectory] = None


def _size(config: ExperimentConfig, key: str, default: Optional[int] = None) -> int:
    if key in config.sizes:
        return config.sizes[key]
    if default is None:
        raise DatasetError(f'{config.model.value}: size {key!r} is required')
    return default


def generate(config: ExperimentConfig, seed: int) -> Dataset:
    """Synthetic dataset of the experiment's model for one seed.

    Raises:
        DatasetError: missing or invalid sizes
    """

    match config.model:
        case ModelKind.ELASTIC_NET:
            return data.gen_elastic_net(seed, _size(config, 'ntr'), _size(config, 'nval'), _size(config, 'nte', 100),
                                        _size(config, 'p'))
        case ModelKind.SPARSE_GROUP_LASSO:
            return data.gen_sgl(seed, _size(config, 'n'), _size(config, 'p'), _size(config, 'groups'),
                                _size(config, 'nte', 100))
        case ModelKind.SVM:
            return data.gen_svm(seed, _size(config, 'n'), _size(config, 'p'), config.noise, config.folds)

    raise DatasetError(f'no generator for {config.model}')


class Runner:
    """Class to run the configured methods of an experiment."""

    def __init__(self, settings: Optional[Settings]):
        self.__settings = settings

    def dataset(self, config: ExperimentConfig, seed: int) -> Dataset:
        """Dataset of one seed: generated from sizes, or loaded and split by the seed.

        Raises:
            DatasetError: invalid sizes or split parameters
            FileNotFoundError: missing dataset file
        """

        if config.dataset is None:
            return generate(config, seed)

        dataset = data.load(config.dataset)
        if config.dataset.suffix in ('.npz', '.json') and dataset.splits:
            return dataset

        if config.model == ModelKind.SVM:
            return data.svm_split(dataset, config.folds, seed)
        return data.random_split(dataset, _size(config, 'ntr'), _size(config, 'nval'), seed)

    def grid_spec(self, config: ExperimentConfig, model: BilevelModel) -> GridSpec:
        low = self.__read('Search', 'LogLow', DEFAULT_LOG_LOW)
        high = self.__read('Search', 'LogHigh', DEFAULT_LOG_HIGH)
        return GridSpec.uniform(model.search_dims, low, high, config.grid_points)

    def run(self, config: ExperimentConfig, method: Method, seed: int, dataset: Optional[Dataset] = None) -> Outcome:
        """Runs one method on the dataset of one seed.

        A failing lower-level solve or an aborted run yields status 'aborted' and infinite errors.

        Args:
            config (ExperimentConfig): experiment
            method (Method): tuning method
            seed (int): dataset seed, also the random search seed
            dataset (Optional[Dataset]): dataset to use instead of building it from the seed

        Returns:
            Outcome: result row and, for ldmma, the trajectory
        """

        dataset = dataset if dataset is not None else self.dataset(config, seed)
        model = from_dataset(config.model, dataset)
        solver_settings = solver_settings_from(self.__settings)

        start = time.perf_counter()
        try:
            match method:
                case Method.LDMMA:
                    outcome = self.__ldmma(config, model, seed)
                case Method.GRID:
                    result = baselines.grid_search(model, self.grid_spec(config, model), solver_settings)
                    outcome = _search_outcome(method, seed, result)
                case Method.RANDOM:
                    result = baselines.random_search(model, config.random_samples, self.grid_spec(config, model), seed,
                                                     solver_settings)
                    outcome = _search_outcome(method, seed, result)
                case _:
                    raise ValueError(f'unknown method: {method}')
        except SolverError as err:
            logging.error('run (%s, seed=%d) - %s', method.value, seed, err)
            outcome = Outcome(RunRecord(method=method, seed=seed, time_s=0.0, val_err=np.inf, test_err=np.inf,
                                        status='aborted'))

        outcome.record.time_s = time.perf_counter() - start
        logging.info('run (%s, seed=%d) - val %.6e, test %.6e, %s', method.value, seed, outcome.record.val_err,
                     outcome.record.test_err, outcome.record.status)
        return outcome

    def bench(self, config: ExperimentConfig) -> list[Outcome]:
        """All methods on all seeds; seeds run concurrently up to config.jobs, rows in seed order."""

        def one_seed(seed: int) -> list[Outcome]:
            dataset = self.dataset(config, seed)
            return [self.run(config, method, seed, dataset) for method in config.methods]

        if config.jobs <= 1:
            per_seed = [one_seed(seed) for seed in config.seeds]
        else:
            with ThreadPoolExecutor(max_workers=config.jobs) as executor:
                per_seed = list(executor.map(one_seed, config.seeds))

        return [outcome for outcomes in per_seed for outcome in outcomes]

    def __ldmma(self, config: ExperimentConfig, model: BilevelModel, seed: int) -> Outcome:
        run_config = run_config_from(self.__settings,
                                     model,
                                     epsilon=config.epsilon,
                                     beta=config.beta,
                                     lambda0=config.lambda0,
                                     max_outer_iters=config.max_outer_iters,
                                     step_tol=config.step_tol,
                                     seed=seed)

        z, trajectory = ldmma.run(model, run_config)
        record = RunRecord(method=Method.LDMMA,
                           seed=seed,
                           time_s=0.0,
                           val_err=model.val_error(z),
                           test_err=model.test_error(z, run_config.solver),
                           iters=trajectory.iterations,
                           status=trajectory.termination.value)
        return Outcome(record, trajectory)

    def __read(self, section: str, key: str, default):
        value = self.__settings.read(section, key) if self.__settings is not None else None
        return default if value is None else value


def _search_outcome(method: Method, seed: int, result: baselines.SearchResult) -> Outcome:
    status = 'completed' if np.isfinite(result.val_error) else 'failed'
    return Outcome(
        RunRecord(method=method,
                  seed=seed,
                  time_s=0.0,
                  val_err=result.val_error,
                  test_err=result.test_error,
                  iters=len(result.evaluations),
                  status=status))


def result_name(config: ExperimentConfig, method: Method, seed: int) -> str:
    return f'{config.model.value}_{method.value}_seed{seed}'


def output_dir(config: ExperimentConfig, settings: Optional[Settings]) -> Path:
    """The experiment's output path, or [Path] Results when it is left at its default."""

    configured = settings.read('Path', 'Results') if settings is not None else None
    if configured is not None and config.output == Path('results'):
        return Path(configured)
    return config.output
