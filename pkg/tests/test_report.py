import numpy as np
from rich.console import Console

from dualtune.ldmma import IterationRecord, Trajectory
from dualtune.model import Method, RunRecord
from dualtune.report import Reporter
from dualtune.statistics import StatisticHandler
from dualtune.viewer import Viewer

from tests import problems

RECORDS = [
    RunRecord(method=Method.LDMMA, seed=0, time_s=1.5, val_err=0.25, test_err=0.5, iters=4, status='converged'),
    RunRecord(method=Method.GRID, seed=0, time_s=3.0, val_err=0.5, test_err=0.75, iters=100, status='completed'),
    RunRecord(method=Method.LDMMA, seed=1, time_s=2.5, val_err=np.inf, test_err=np.inf, status='aborted')
]


def test_results_csv():
    reporter = Reporter(problems.out_dir, StatisticHandler())

    result = reporter.results(RECORDS)

    assert result.splitlines() == [
        'method,seed,time_s,val_err,test_err,iters,status', 'ldmma,0,1.5,0.25,0.5,4,converged',
        'grid,0,3,0.5,0.75,100,completed', 'ldmma,1,2.5,inf,inf,0,aborted'
    ]


def test_aggregates_csv():
    reporter = Reporter(problems.out_dir, StatisticHandler())

    result = reporter.aggregates(RECORDS)

    lines = result.splitlines()
    assert lines[0] == 'method,runs,coverage,time_mean,time_std,val_mean,val_std,test_mean,test_std'
    assert lines[1] == 'ldmma,2,0.5,1.5,0,0.25,0,0.5,0'
    assert lines[2] == 'grid,1,1,3,0,0.5,0,0.75,0'


def test_write_files():
    problems.cleanup()
    reporter = Reporter(problems.out_dir, StatisticHandler())
    trajectory = Trajectory([IterationRecord(k=0, ul_objective=1.0, val_error=0.1, gap_value=0.0)])

    results = reporter.write_results('bench', RECORDS)
    aggregates = reporter.write_aggregates('bench', RECORDS)
    lines = reporter.write_trajectory('ldmma_seed0', trajectory)

    assert results.name == 'bench.csv'
    assert aggregates.name == 'bench_aggregate.csv'
    assert lines.name == 'ldmma_seed0.jsonl'
    assert Trajectory.load(lines).records == trajectory.records
    problems.cleanup()


def test_viewer_prints_tables():
    console = Console(record=True, width=140)
    viewer = Viewer(StatisticHandler(), console)
    trajectory = Trajectory([IterationRecord(k=0, ul_objective=1.0, val_error=0.1, gap_value=0.0)])

    viewer.display_results('Run - elastic-net', RECORDS)
    viewer.display_statistics(RECORDS)
    viewer.display_trajectory('Trajectory - test', trajectory)
    viewer.display_manifest('Dataset', {'generator': 'svm', 'n': 60})

    output = console.export_text()
    assert 'Run - elastic-net' in output
    assert 'aborted' in output
    assert '0.25 ± 0' in output
    assert 'Trajectory - test' in output
    assert 'generator' in output
