"""This module is responsible for a visual representation of runs, benchmarks and datasets"""

from rich.console import Console
from rich.style import Style
from rich.table import Table

from dualtune import converter
from dualtune.ldmma import Trajectory
from dualtune.model import RunRecord
from dualtune.statistics import StatisticHandler


class Viewer:
    """Viewer class for displaying result rows, aggregates and trajectories"""

    def __init__(self, statistic: StatisticHandler, console: Console = None):
        self.__stats = statistic
        self.__console = console or Console()

    def display_manifest(self, title: str, manifest: dict):
        table = Table(title=title)
        table.add_column('Key')
        table.add_column('Value', justify='right')

        for key, value in manifest.items():
            table.add_row(str(key), str(value))

        self.__console.print(table)

    def display_results(self, title: str, records: list[RunRecord]):
        """Displays one row per method and seed

        Args:
            title (str): table title
            records (list[RunRecord]): result rows
        """

        table = _table(title, ['Method', 'Seed', 'Time', 'Val. Err.', 'Test Err.', 'Iters', 'Status'])

        for record in records:
            style = Style() if record.succeeded() else Style(color='red')
            table.add_row(record.method.value,
                          str(record.seed),
                          converter.seconds_to_str(record.time_s),
                          converter.float_to_str(record.val_err),
                          converter.float_to_str(record.test_err),
                          str(record.iters),
                          record.status,
                          style=style)

        self.__console.print(table)

    def display_statistics(self, records: list[RunRecord]):
        """Displays mean and standard deviation per method

        Args:
            records (list[RunRecord]): result rows of all seeds
        """

        table = _table('Benchmark', ['Method', 'Runs', 'Coverage', 'Time(s)', 'Val. Err.', 'Test Err.'])

        for stats in self.__stats.aggregate(records):
            table.add_row(stats.method.value, str(stats.runs), self.__colorize(stats.coverage),
                          _mean_std(stats.time_mean, stats.time_std), _mean_std(stats.val_mean, stats.val_std),
                          _mean_std(stats.test_mean, stats.test_std))

        self.__console.print(table)

    def display_trajectory(self, title: str, trajectory: Trajectory):
        table = _table(title, ['k', 'UL Objective', 'Val. Err.', 'Step', 'Gap', 'Solver Iters', 'Status'])

        for record in trajectory:
            table.add_row(str(record.k), converter.float_to_str(record.ul_objective),
                          converter.float_to_str(record.val_error), converter.float_to_str(record.step_norm),
                          converter.float_to_str(record.gap_value), str(record.subproblem_iterations), record.status)

        self.__console.print(table)

    @staticmethod
    def __colorize(value: float) -> str:
        text = converter.float_to_str(value)
        return f'[green]{text}[/]' if value >= 1.0 else f'[red]{text}[/]'


def _mean_std(mean: float, std: float) -> str:
    return f'{converter.float_to_str(mean)} ± {converter.float_to_str(std)}'


def _table(title: str, columns: list[str]) -> Table:
    table = Table(title=title)
    table.add_column(columns[0])
    for column in columns[1:-1]:
        table.add_column(column, justify='right')
    table.add_column(columns[-1], justify='center')

    return table
