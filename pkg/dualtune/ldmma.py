"""Majorization-minimization outer loop over the lower-level duality reformulation."""

from __future__ import annotations

import logging
import time
from enum import Enum
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel

from dualtune import solver
from dualtune.model import RunConfig
from dualtune.models import BilevelModel, accept
from dualtune.reformulation import IteratePoint, duality_gap_value, majorized_value
from dualtune.solver import SolverError


class Termination(str, Enum):
    """Enumeration of the reasons a run ends"""

    RUNNING = 'running'
    CONVERGED = 'converged'
    MAX_OUTER_ITERS = 'max_outer_iters'
    ABORTED = 'aborted'


class IterationRecord(BaseModel):
    """One line of the trajectory; k = 0 is the lower-level initialization."""

    k: int
    ul_objective: float
    val_error: float
    step_norm: float = 0.0
    gap_value: float
    radius_violation: float = 0.0
    subproblem_iterations: int = 0
    subproblem_time: float = 0.0
    status: str = 'optimal'
    lam: list[float] = []


class Trajectory:
    """Ordered iteration records of a run plus its termination reason."""

    def __init__(self, records: Optional[list[IterationRecord]] = None, termination: Termination = Termination.RUNNING):
        self.records = records or []
        self.termination = termination

    def append(self, record: IterationRecord):
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[IterationRecord]:
        return iter(self.records)

    def __getitem__(self, index: int) -> IterationRecord:
        return self.records[index]

    @property
    def iterations(self) -> int:
        """Number of subproblems solved."""

        return max(len(self.records) - 1, 0)

    def ul_objectives(self) -> np.ndarray:
        return np.array([record.ul_objective for record in self.records])

    def step_norms(self) -> np.ndarray:
        return np.array([record.step_norm for record in self.records])

    def to_jsonl(self) -> str:
        return ''.join(record.model_dump_json() + '\n' for record in self.records)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding='utf-8')
        logging.debug('trajectory (%s) - %d records written', path, len(self.records))
        return path

    @classmethod
    def from_jsonl(cls, text: str) -> Trajectory:
        return cls([IterationRecord.model_validate_json(line) for line in text.splitlines() if line.strip()])

    @classmethod
    def load(cls, path: str | Path) -> Trajectory:
        return cls.from_jsonl(Path(path).read_text(encoding='utf-8'))


def initialize(model: BilevelModel, lam0, config: Optional[RunConfig] = None) -> IteratePoint:
    """Starting point: lower-level solution at lam0 with r = P(x) and its dual certificate.

    Args:
        model (BilevelModel): bilevel model
        lam0 (array-like): initial hyperparameters, nonnegative
        config (Optional[RunConfig]): source of the solver settings

    Raises:
        SolverError: the lower-level solve failed

    Returns:
        IteratePoint: z0 with duality_gap_value(z0) close to zero
    """

    settings = config.solver if config is not None else None
    z0 = model.ll_solve(lam0, settings).point
    logging.info('initialize (%s) - ul objective %.6e, gap value %.3e', model.kind.value, model.ul_objective(z0.x),
                 duality_gap_value(model, z0))
    return z0


def _record(model: BilevelModel, z: IteratePoint, k: int, **fields) -> IterationRecord:
    return IterationRecord(k=k,
                           ul_objective=model.ul_objective(z.x),
                           val_error=model.val_error(z),
                           gap_value=duality_gap_value(model, z),
                           lam=z.lam.tolist(),
                           **fields)


class Step(NamedTuple):
    """Accepted subproblem solution mapped back to an iterate."""

    point: IteratePoint
    solution: solver.Solution
    radius_violation: float


def step(model: BilevelModel, z: IteratePoint, config: RunConfig) -> Step:
    """Solves the subproblem anchored at z and returns the polished next iterate.

    Raises:
        SolverError: the subproblem solve was not accepted
    """

    sub = model.build_subproblem(z, config.epsilon, config.beta, config.majorization, config.fallback)
    if any(kind != config.majorization for kind in sub.kinds):
        logging.warning('step (%s) - majorant fallback for pairs %s', model.kind.value,
                        [i for i, kind in enumerate(sub.kinds) if kind != config.majorization])

    solution = accept(solver.solve(sub.program, config.solver), config.solver, f'step ({model.kind.value})')
    raw = sub.point(solution.z)
    violation = model.radius_violation(raw)
    return Step(model.polish(raw), solution, violation)


def run(model: BilevelModel, config: RunConfig) -> tuple[IteratePoint, Trajectory]:
    """Runs the majorization-minimization loop from the lower-level solution at lambda0.

    Stops once ||z+ - z|| <= step_tol * (1 + ||z||) or after max_outer_iters subproblems.
    A rejected subproblem solve ends the run with termination ABORTED and the last accepted
    iterate.

    Args:
        model (BilevelModel): bilevel model
        config (RunConfig): run parameters

    Raises:
        SolverError: the initial lower-level solve failed

    Returns:
        tuple[IteratePoint, Trajectory]: last accepted iterate and the trajectory
    """

    z = initialize(model, config.lambda0, config)
    trajectory = Trajectory()
    trajectory.append(_record(model, z, 0))

    for k in range(1, config.max_outer_iters + 1):
        start = time.perf_counter()
        try:
            result = step(model, z, config)
        except SolverError as err:
            logging.error('ldmma (k=%d) - abort: %s', k, err)
            trajectory.termination = Termination.ABORTED
            return z, trajectory

        step_norm = result.point.distance(z)
        trajectory.append(
            _record(model,
                    result.point,
                    k,
                    step_norm=step_norm,
                    radius_violation=result.radius_violation,
                    subproblem_iterations=result.solution.iterations,
                    subproblem_time=time.perf_counter() - start,
                    status=result.solution.status.value))

        logging.info('ldmma (k=%d) - ul %.6e step %.3e gap %.3e', k, trajectory[-1].ul_objective, step_norm,
                     trajectory[-1].gap_value)

        converged = step_norm <= config.step_tol * (1.0 + z.norm())
        z = result.point
        if converged:
            trajectory.termination = Termination.CONVERGED
            break
    else:
        trajectory.termination = Termination.MAX_OUTER_ITERS

    logging.info('ldmma (%s) - %s after %d iterations', model.kind.value, trajectory.termination.value,
                 trajectory.iterations)
    return z, trajectory


class KktReport(NamedTuple):
    """Operational stationarity check of an iterate."""

    gap_constraint: float
    majorized_constraint: float
    radius_activity: np.ndarray
    fixed_point_residual: float
    step_tol: float
    multipliers: np.ndarray
    status: str

    @property
    def stationary(self) -> bool:
        return self.fixed_point_residual <= self.step_tol


def kkt_report(model: BilevelModel, z: IteratePoint, config: RunConfig) -> KktReport:
    """Constraint activities at z and the residual of one more subproblem step from z.

    The multipliers are those of the extra subproblem solve; they belong to the subproblem,
    not to the outer problem.

    Raises:
        SolverError: the extra subproblem solve failed
    """

    result = step(model, z, config)
    residual = result.point.distance(z) / (1.0 + z.norm())

    report = KktReport(gap_constraint=duality_gap_value(model, z) - config.epsilon,
                       majorized_constraint=majorized_value(model, result.point, z, config.epsilon, config.majorization,
                                                            config.fallback),
                       radius_activity=model.radii(z) - z.r,
                       fixed_point_residual=residual,
                       step_tol=config.step_tol,
                       multipliers=result.solution.y,
                       status=result.solution.status.value)

    logging.info('kkt_report (%s) - g %.3e, fixed point residual %.3e', model.kind.value, report.gap_constraint,
                 residual)
    return report


def check_sufficient_decrease(trajectory: Trajectory, beta: float, slack: float = 1e-8) -> list[int]:
    """Iterations k violating L(x^k) - L(x^k-1) <= -beta/2 ||z^k - z^k-1||^2 + slack."""

    violations = []
    for previous, current in zip(trajectory.records, trajectory.records[1:]):
        bound = -0.5 * beta * current.step_norm**2 + slack
        if current.ul_objective - previous.ul_objective > bound:
            violations.append(current.k)
    return violations
