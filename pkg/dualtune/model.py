"""This module contains the configuration models used in dualtune"""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from dualtune.reformulation import MajorizationKind


class SolverSettings(BaseModel):
    """Budgets and tolerances of a single conic solve."""

    model_config = ConfigDict(frozen=True)

    max_iter: int = Field(default=200, ge=1)
    tol_gap: float = Field(default=1e-8, gt=0)
    tol_primal: float = Field(default=1e-8, gt=0)
    tol_dual: float = Field(default=1e-8, gt=0)
    time_limit_seconds: Optional[float] = Field(default=None, gt=0)
    regularization: float = Field(default=1e-8, gt=0)
    refinement_steps: int = Field(default=3, ge=0)

    def relaxed(self, factor: float) -> SolverSettings:
        """Copy with all three tolerances multiplied by factor."""

        return self.model_copy(update={
            'tol_gap': self.tol_gap * factor,
            'tol_primal': self.tol_primal * factor,
            'tol_dual': self.tol_dual * factor
        })


class RunConfig(BaseModel):
    """Inputs of one majorization-minimization run."""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(gt=0)
    beta: float = Field(default=1e-3, ge=0)
    lambda0: list[float]
    max_outer_iters: int = Field(default=100, ge=1)
    step_tol: float = Field(default=1e-6, gt=0)
    majorization: MajorizationKind = MajorizationKind.CAUCHY_QUADRATIC
    fallback: bool = True
    solver: SolverSettings = SolverSettings()
    seed: Optional[int] = None

    @field_validator('lambda0')
    @classmethod
    def nonnegative(cls, value: list[float]) -> list[float]:
        if not value:
            raise ValueError('lambda0 must not be empty')
        if any(v < 0 or not np.isfinite(v) for v in value):
            raise ValueError(f'lambda0 must be finite and nonnegative: {value}')
        return value


class GridSpec(BaseModel):
    """Per-hyperparameter log10 search box and number of grid points."""

    model_config = ConfigDict(frozen=True)

    log_low: list[float]
    log_high: list[float]
    points: list[int]

    @model_validator(mode='after')
    def consistent(self) -> GridSpec:
        if not len(self.log_low) == len(self.log_high) == len(self.points) or not self.points:
            raise ValueError('grid spec: low, high and points must have the same nonzero length')

        for low, high, count in zip(self.log_low, self.log_high, self.points):
            if count < 1:
                raise ValueError(f'grid spec: point count {count} < 1')
            if count >= 2 and not low < high:
                raise ValueError(f'grid spec: low {low} must be smaller than high {high}')
            if count == 1 and low > high:
                raise ValueError(f'grid spec: low {low} larger than high {high}')

        return self

    @property
    def dims(self) -> int:
        return len(self.points)

    @classmethod
    def uniform(cls, dims: int, low: float = -5.0, high: float = 2.0, points: int = 10) -> GridSpec:
        return cls(log_low=[low] * dims, log_high=[high] * dims, points=[points] * dims)

    def axis(self, index: int) -> np.ndarray:
        """Grid values of one hyperparameter (a single point sits at the lower end)."""

        if self.points[index] == 1:
            return np.array([10.0**self.log_low[index]])
        return np.logspace(self.log_low[index], self.log_high[index], self.points[index])


class ModelKind(str, Enum):
    """Enumeration of the supported bilevel models"""

    ELASTIC_NET = 'elastic-net'
    SPARSE_GROUP_LASSO = 'sgl'
    SVM = 'svm'


class Method(str, Enum):
    """Enumeration of the tuning methods"""

    LDMMA = 'ldmma'
    GRID = 'grid'
    RANDOM = 'random'


class ExperimentConfig(BaseModel):
    """An experiment: one model, its data recipe, methods, seeds and run overrides."""

    model: ModelKind
    dataset: Optional[Path] = None
    sizes: dict[str, int] = Field(default_factory=dict)
    methods: list[Method] = Field(default_factory=lambda: [Method.LDMMA])
    seeds: list[int] = Field(default_factory=lambda: [0])
    folds: int = Field(default=3, ge=2)
    noise: float = Field(default=0.1, ge=0, lt=0.5)
    epsilon: Optional[float] = Field(default=None, gt=0)
    beta: Optional[float] = Field(default=None, ge=0)
    lambda0: Optional[list[float]] = None
    max_outer_iters: Optional[int] = Field(default=None, ge=1)
    step_tol: Optional[float] = Field(default=None, gt=0)
    grid_points: int = Field(default=10, ge=1)
    random_samples: int = Field(default=100, ge=1)
    output: Path = Path('results')
    jobs: int = Field(default=1, ge=1)

    @field_validator('seeds')
    @classmethod
    def nonempty(cls, value: list[int]) -> list[int]:
        if not value:
            raise ValueError('at least one seed is required')
        return value

    @classmethod
    def load(cls, file: str | Path) -> ExperimentConfig:
        """Loads an experiment from a JSON file.

        Args:
            file (str | Path): JSON document following this model's schema

        Returns:
            ExperimentConfig: validated experiment
        """

        return cls.model_validate_json(Path(file).read_text(encoding='utf-8'))

    def overridden(self, **overrides) -> ExperimentConfig:
        """Returns a validated copy with all non-None overrides applied."""

        data = self.model_dump()
        data.update({key: value for key, value in overrides.items() if value is not None})
        return ExperimentConfig.model_validate(data)


class RunRecord(BaseModel):
    """One result row: a tuning method applied to the dataset of one seed."""

    method: Method
    seed: int
    time_s: float
    val_err: float
    test_err: float
    iters: int = 0
    status: str

    def succeeded(self) -> bool:
        return self.status not in ('aborted', 'failed') and np.isfinite(self.val_err)
