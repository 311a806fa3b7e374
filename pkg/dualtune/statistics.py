"""This module aggregates result rows over seeds"""

import logging
from dataclasses import dataclass

import numpy as np

from dualtune.model import Method, RunRecord


@dataclass
class Statistics:
    """Mean and population standard deviation of one method's successful runs"""

    method: Method
    runs: int = 0
    successes: int = 0
    time_mean: float = np.nan
    time_std: float = np.nan
    val_mean: float = np.nan
    val_std: float = np.nan
    test_mean: float = np.nan
    test_std: float = np.nan

    @property
    def coverage(self) -> float:
        return self.successes / self.runs if self.runs else 0.0


class StatisticHandler:
    """Class for aggregating run records per method"""

    def collect(self, method: Method, data: list[RunRecord]) -> Statistics:
        """Collects the statistics of all records of the given method

        Args:
            method (Method): method whose records are aggregated
            data (list[RunRecord]): result rows, other methods are ignored

        Returns:
            Statistics: aggregate over the successful runs, nan if none succeeded
        """

        records = [record for record in data if record.method == method]
        statistics = Statistics(method, runs=len(records))

        succeeded = [record for record in records if record.succeeded()]
        statistics.successes = len(succeeded)
        if len(succeeded) < len(records):
            logging.warning('collect (%s) - %d of %d runs failed', method.value, len(records) - len(succeeded),
                            len(records))
        if not succeeded:
            return statistics

        for name, values in (('time', [r.time_s for r in succeeded]), ('val', [r.val_err for r in succeeded]),
                             ('test', [r.test_err for r in succeeded])):
            setattr(statistics, f'{name}_mean', float(np.mean(values)))
            setattr(statistics, f'{name}_std', float(np.std(values)))

        return statistics

    def aggregate(self, data: list[RunRecord]) -> list[Statistics]:
        """One Statistics per method, in order of first appearance"""

        methods = list(dict.fromkeys(record.method for record in data))
        return [self.collect(method, data) for method in methods]

    @staticmethod
    def wins(data: list[RunRecord], method: Method, baseline: Method) -> tuple[int, int]:
        """(seeds where method has strictly lower validation error than baseline, seeds compared)"""

        left = {r.seed: r.val_err for r in data if r.method == method and r.succeeded()}
        right = {r.seed: r.val_err for r in data if r.method == baseline and r.succeeded()}
        common = sorted(left.keys() & right.keys())
        return sum(left[seed] < right[seed] for seed in common), len(common)
