"""Module for writing result and aggregate CSV files and trajectory JSON lines"""

import csv
import io
import logging
from pathlib import Path

from dualtune import converter
from dualtune.ldmma import Trajectory
from dualtune.model import RunRecord
from dualtune.statistics import StatisticHandler

RESULT_COLUMNS = ['method', 'seed', 'time_s', 'val_err', 'test_err', 'iters', 'status']
AGGREGATE_COLUMNS = [
    'method', 'runs', 'coverage', 'time_mean', 'time_std', 'val_mean', 'val_std', 'test_mean', 'test_std'
]


class Reporter:
    """Class for writing the machine-readable outputs of runs and benchmarks"""

    def __init__(self, out: str | Path, statistic: StatisticHandler):
        self.__stats = statistic
        self.__out = Path(out)

    @property
    def out(self) -> Path:
        return self.__out

    def results(self, records: list[RunRecord]) -> str:
        """CSV text of result rows, in the given order"""

        rows = [[
            record.method.value, record.seed,
            converter.float_to_str(record.time_s),
            converter.float_to_str(record.val_err),
            converter.float_to_str(record.test_err), record.iters, record.status
        ] for record in records]
        return _csv(RESULT_COLUMNS, rows)

    def aggregates(self, records: list[RunRecord]) -> str:
        """CSV text of the per-method mean and standard deviation rows"""

        rows = []
        for stats in self.__stats.aggregate(records):
            rows.append([stats.method.value, stats.runs, converter.float_to_str(stats.coverage)] + [
                converter.float_to_str(value) for value in (stats.time_mean, stats.time_std, stats.val_mean,
                                                            stats.val_std, stats.test_mean, stats.test_std)
            ])
        return _csv(AGGREGATE_COLUMNS, rows)

    def write_results(self, name: str, records: list[RunRecord]) -> Path:
        return self.__write(f'{name}.csv', self.results(records))

    def write_aggregates(self, name: str, records: list[RunRecord]) -> Path:
        return self.__write(f'{name}_aggregate.csv', self.aggregates(records))

    def write_trajectory(self, name: str, trajectory: Trajectory) -> Path:
        return self.__write(f'{name}.jsonl', trajectory.to_jsonl())

    def __write(self, filename: str, text: str) -> Path:
        if not self.__out.exists():
            self.__out.mkdir(parents=True, exist_ok=True)

        path = self.__out.joinpath(filename)
        path.write_text(text, encoding='utf-8')
        logging.info('report (%s) - written', path)
        return path


def _csv(header: list[str], rows: list[list]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()
