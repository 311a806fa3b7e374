"""Command Line Interface of dualtune"""

import logging
from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from dualtune import data
from dualtune.data import DatasetError
from dualtune.experiment import Runner, generate as generate_dataset, output_dir, result_name
from dualtune.ldmma import Trajectory
from dualtune.model import ExperimentConfig, Method, ModelKind
from dualtune.report import Reporter
from dualtune.settings import Settings
from dualtune.statistics import StatisticHandler
from dualtune.viewer import Viewer

SETTINGS_FILE = 'settings.ini'

settings = Settings(SETTINGS_FILE) if Path(SETTINGS_FILE).exists() else None
statistics = StatisticHandler()
runner = Runner(settings)
viewer = Viewer(statistics)


def error(msg: str):
    """Utility function for printing an error message and also log it

    Args:
        msg (str): Error message
    """

    print(f'[Error] {msg}')
    logging.error(msg)


def warning(msg: str):
    """Utility function for print an warning message and also log it

    Args:
        msg (str): Warning message
    """

    print(f'[Warning] {msg}')
    logging.warning(msg)


def _experiment(config_file: Optional[str], model: Optional[str], **overrides) -> ExperimentConfig:
    """Experiment from a JSON file and/or flags; flags win over file values."""

    sizes = {key: overrides.pop(key) for key in ('ntr', 'nval', 'nte', 'p', 'n', 'groups') if key in overrides}
    sizes = {key: value for key, value in sizes.items() if value is not None}

    try:
        if config_file is not None:
            config = ExperimentConfig.load(config_file)
        elif model is not None:
            search = {
                'grid_points': settings.read('Search', 'GridPoints') if settings is not None else None,
                'random_samples': settings.read('Search', 'RandomSamples') if settings is not None else None
            }
            config = ExperimentConfig(model=ModelKind(model),
                                      **{key: value for key, value in search.items() if value is not None})
        else:
            raise click.UsageError('either MODEL or --config is required')

        if model is not None:
            overrides['model'] = ModelKind(model)
        if sizes:
            overrides['sizes'] = {**config.sizes, **sizes}
        return config.overridden(**overrides)
    except (ValidationError, ValueError) as err:
        raise click.UsageError(str(err)) from err


def _size_options(func):
    for name, help_text in reversed([('--ntr', 'Training samples (elastic net)'),
                                     ('--nval', 'Validation samples (elastic net)'), ('--nte', 'Test samples'),
                                     ('-p', 'Number of features'), ('--n', 'Samples (sgl: training, svm: total)'),
                                     ('--groups', 'Number of groups (sgl)')]):
        func = click.option(name, type=int, default=None, help=help_text)(func)
    return func


@click.command(help='Generates a synthetic dataset and prints its manifest')
@click.argument('model', type=click.Choice([kind.value for kind in ModelKind]))
@click.option('-s', '--seed', type=int, default=0, help='Generator seed')
@_size_options
@click.option('--noise', type=float, default=0.1, help='Label flip rate (svm)')
@click.option('--folds', type=int, default=3, help='Cross-validation folds (svm)')
@click.option('-o', '--out', type=click.Path(dir_okay=False), default=None, help='Output file, .npz + .json sidecar')
def generate(model: str, seed: int, out: Optional[str], **options):
    """Command for generating a seeded synthetic dataset.

    Args:
        model (str): model kind the dataset is generated for
        seed (int): generator seed
        out (Optional[str]): output file, defaults to <Datasets>/<model>_seed<seed>.npz
    """

    config = _experiment(None, model, **options)
    try:
        dataset = generate_dataset(config, seed)
    except DatasetError as err:
        raise click.UsageError(str(err)) from err

    if out is None:
        folder = settings.read('Path', 'Datasets') if settings is not None else None
        out = Path(folder or 'datasets').joinpath(f'{model}_seed{seed}.npz')

    path = data.save(dataset, out)
    viewer.display_manifest(f'Dataset - {path}', dataset.manifest)


@click.command(help='Runs one tuning method on one seed and writes the result row and trajectory')
@click.argument('model', required=False, type=click.Choice([kind.value for kind in ModelKind]))
@click.option('-c', '--config', 'config_file', type=click.Path(exists=True, dir_okay=False), help='Experiment JSON')
@click.option('-m', '--method', type=click.Choice([method.value for method in Method]), default='ldmma')
@click.option('-s', '--seed', type=int, default=None, help='Seed, defaults to the first configured seed')
@click.option('--dataset', type=click.Path(exists=True, dir_okay=False), default=None, help='Dataset file')
@_size_options
@click.option('--epsilon', type=float, default=None, help='Relaxation of the duality-gap constraint')
@click.option('--beta', type=float, default=None, help='Proximal weight')
@click.option('--max-outer-iters', type=int, default=None, help='Iteration budget')
@click.option('--step-tol', type=float, default=None, help='Relative step tolerance')
@click.option('-o', '--output', type=click.Path(file_okay=False), default=None, help='Output folder')
def run(model: Optional[str], config_file: Optional[str], method: str, seed: Optional[int], **options):
    """Command for running a single method on a single seed.

    Exits with code 1 when the run aborted on a solver failure.
    """

    config = _experiment(config_file, model, **options)
    seed = config.seeds[0] if seed is None else seed
    method = Method(method)

    try:
        outcome = runner.run(config, method, seed)
    except (DatasetError, FileNotFoundError) as err:
        raise click.UsageError(str(err)) from err

    reporter = Reporter(output_dir(config, settings), statistics)
    name = result_name(config, method, seed)
    reporter.write_results(name, [outcome.record])
    if outcome.trajectory is not None:
        reporter.write_trajectory(name, outcome.trajectory)

    viewer.display_results(f'Run - {config.model.value}', [outcome.record])
    if outcome.record.status == 'aborted':
        error(f'run ({method.value}, seed={seed}) - aborted on a solver failure')
        raise click.exceptions.Exit(1)


@click.command(help='Runs all configured methods on all seeds and aggregates the results')
@click.argument('model', required=False, type=click.Choice([kind.value for kind in ModelKind]))
@click.option('-c', '--config', 'config_file', type=click.Path(exists=True, dir_okay=False), help='Experiment JSON')
@click.option('-m', '--methods', type=str, default=None, help='Comma separated methods, e.g. ldmma,grid')
@click.option('--seeds', type=str, default=None, help='Comma separated seeds')
@click.option('-j', '--jobs', type=int, default=None, help='Seeds evaluated concurrently')
@click.option('--dataset', type=click.Path(exists=True, dir_okay=False), default=None, help='Dataset file')
@_size_options
@click.option('--epsilon', type=float, default=None, help='Relaxation of the duality-gap constraint')
@click.option('-o', '--output', type=click.Path(file_okay=False), default=None, help='Output folder')
def bench(model: Optional[str], config_file: Optional[str], methods: Optional[str], seeds: Optional[str], **options):
    """Command for benchmarking methods over seeds.

    Exits with code 1 when any run aborted; aggregates cover the successful runs.
    """

    try:
        if methods is not None:
            options['methods'] = [Method(value.strip()) for value in methods.split(',')]
        if seeds is not None:
            options['seeds'] = [int(value) for value in seeds.split(',')]
    except ValueError as err:
        raise click.UsageError(str(err)) from err

    config = _experiment(config_file, model, **options)

    try:
        outcomes = runner.bench(config)
    except (DatasetError, FileNotFoundError) as err:
        raise click.UsageError(str(err)) from err

    records = [outcome.record for outcome in outcomes]
    reporter = Reporter(output_dir(config, settings), statistics)
    name = f'{config.model.value}_bench'
    reporter.write_results(name, records)
    reporter.write_aggregates(name, records)
    for outcome in outcomes:
        if outcome.trajectory is not None:
            reporter.write_trajectory(result_name(config, outcome.record.method, outcome.record.seed),
                                      outcome.trajectory)

    viewer.display_results(f'Bench - {config.model.value}', records)
    viewer.display_statistics(records)

    failed = [record for record in records if not record.succeeded()]
    if failed:
        warning(f'bench - {len(failed)} of {len(records)} runs did not succeed')
    if any(record.status == 'aborted' for record in records):
        raise click.exceptions.Exit(1)


@click.command(help='Displays a trajectory JSON lines file')
@click.argument('file', type=click.Path(exists=True, dir_okay=False))
def show(file: str):
    """Command for showing the iterations of a run

    Args:
        file (str): trajectory written by run or bench
    """

    try:
        trajectory = Trajectory.load(file)
    except ValidationError as err:
        raise click.UsageError(f'{file} is not a trajectory file: {err}') from err

    viewer.display_trajectory(f'Trajectory - {Path(file).stem}', trajectory)
