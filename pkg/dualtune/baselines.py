"""Gradient-free tuning baselines: grid search and log-uniform random search."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional, Sequence

import numpy as np

from dualtune.model import GridSpec, SolverSettings
from dualtune.models import BilevelModel
from dualtune.reformulation import IteratePoint
from dualtune.solver import SolverError


class Evaluation(NamedTuple):
    """Validation error of the lower-level solution at one search point (+inf on failure)."""

    values: tuple[float, ...]
    val_error: float
    point: Optional[IteratePoint]


class SearchResult(NamedTuple):
    """Best search point, its full hyperparameter vector and errors, and all evaluations."""

    values: tuple[float, ...]
    lam: np.ndarray
    val_error: float
    test_error: float
    point: Optional[IteratePoint]
    evaluations: list[Evaluation]


def evaluate(model: BilevelModel, values: Sequence[float], settings: Optional[SolverSettings] = None) -> Evaluation:
    """Lower-level solve plus validation error; solver failures score +inf."""

    values = tuple(float(v) for v in values)
    try:
        point = model.ll_solve(model.search_point(values), settings).point
    except SolverError as err:
        logging.warning('evaluate (%s) - %s, scored as +inf', values, err)
        return Evaluation(values, np.inf, None)
    return Evaluation(values, model.val_error(point), point)


def _evaluate_all(model: BilevelModel, points: list[tuple[float, ...]], settings: Optional[SolverSettings],
                  jobs: int) -> list[Evaluation]:
    if jobs <= 1:
        return [evaluate(model, values, settings) for values in points]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(lambda values: evaluate(model, values, settings), points))


def _best(model: BilevelModel, evaluations: list[Evaluation], settings: Optional[SolverSettings],
          method: str) -> SearchResult:
    """Smallest validation error; ties go to the lexicographically smallest search point."""

    best = min(evaluations, key=lambda e: (e.val_error, e.values))
    lam = model.search_point(best.values)
    test_error = model.test_error(best.point, settings) if best.point is not None else np.inf

    logging.info('%s (%s) - best %s with val %.6e, test %.6e over %d points', method, model.kind.value, best.values,
                 best.val_error, test_error, len(evaluations))
    return SearchResult(best.values, lam, best.val_error, test_error, best.point, evaluations)


def _check_dims(model: BilevelModel, spec: GridSpec):
    if spec.dims != model.search_dims:
        raise ValueError(f'search: spec has {spec.dims} directions, {model.kind.value} searches {model.search_dims}')


def grid_search(model: BilevelModel,
                spec: GridSpec,
                settings: Optional[SolverSettings] = None,
                jobs: int = 1) -> SearchResult:
    """Evaluates every point of the log-spaced grid.

    Args:
        model (BilevelModel): bilevel model
        spec (GridSpec): log10 box and point count per search direction
        settings (Optional[SolverSettings]): lower-level solver settings
        jobs (int): concurrent evaluations

    Raises:
        ValueError: spec dimension differs from the model's search dimension

    Returns:
        SearchResult: argmin of the validation error
    """

    _check_dims(model, spec)
    points = [tuple(p) for p in itertools.product(*(spec.axis(i) for i in range(spec.dims)))]
    return _best(model, _evaluate_all(model, points, settings, jobs), settings, 'grid_search')


def random_search(model: BilevelModel,
                  samples: int,
                  spec: GridSpec,
                  seed: int,
                  settings: Optional[SolverSettings] = None,
                  jobs: int = 1) -> SearchResult:
    """Evaluates samples log-uniform points of the GridSpec box; point counts are ignored.

    Raises:
        ValueError: samples < 1 or spec dimension mismatch
    """

    if samples < 1:
        raise ValueError(f'random_search: samples must be positive, got {samples}')
    _check_dims(model, spec)

    rng = np.random.default_rng(seed)
    exponents = rng.uniform(spec.log_low, spec.log_high, size=(samples, spec.dims))
    points = [tuple(row) for row in 10.0**exponents]
    return _best(model, _evaluate_all(model, points, settings, jobs), settings, 'random_search')
