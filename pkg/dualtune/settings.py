"""Module for reading configuration settings."""

import configparser
import errno
import os
from pathlib import Path
from typing import Any, Optional

from dualtune import converter
from dualtune.model import RunConfig, SolverSettings
from dualtune.reformulation import MajorizationKind


class Settings:
    """Class for reading single configuration parameter"""

    def __init__(self, file: str):
        if not Path.exists(Path(file)):
            raise FileNotFoundError(errno.ENOENT, os.strerror(errno.ENOENT), file)

        self.config = configparser.ConfigParser()
        self.config.read(file)

    def read(self, section: str, key: str) -> Any:
        """Reads a specific key from the given section.

        Args:
            section (str): config section
            key (str): config key

        Returns:
            Any: returns the configuration value if found else None
        """

        if section in self.config and key in self.config[section]:
            return converter.str_to_value(self.config[section][key])

        return None


_SOLVER_KEYS = {
    'MaxIter': 'max_iter',
    'TolGap': 'tol_gap',
    'TolPrimal': 'tol_primal',
    'TolDual': 'tol_dual',
    'TimeLimit': 'time_limit_seconds',
    'Regularization': 'regularization',
    'RefinementSteps': 'refinement_steps'
}

_LDMMA_KEYS = {'Beta': 'beta', 'StepTol': 'step_tol', 'MaxOuterIters': 'max_outer_iters'}


def _collect(settings: Optional[Settings], section: str, keys: dict[str, str]) -> dict[str, Any]:
    if settings is None:
        return {}
    values = {field: settings.read(section, key) for key, field in keys.items()}
    return {field: value for field, value in values.items() if value is not None}


def solver_settings_from(settings: Optional[Settings]) -> SolverSettings:
    """Solver settings with the [Solver] values layered over the built-in defaults.

    Raises:
        pydantic.ValidationError: a configured value violates the model constraints
    """

    return SolverSettings(**_collect(settings, 'Solver', _SOLVER_KEYS))


def run_config_from(settings: Optional[Settings], model, **overrides) -> RunConfig:
    """Run configuration for a model: model defaults, then [Ldmma] values, then non-None overrides.

    Args:
        settings (Optional[Settings]): INI settings, may be None
        model (BilevelModel): provides default_epsilon and default_lambda0
        overrides: RunConfig fields, None values are ignored

    Raises:
        pydantic.ValidationError: the combined values are invalid

    Returns:
        RunConfig: validated configuration
    """

    data = {
        'epsilon': model.default_epsilon(),
        'lambda0': model.default_lambda0(),
        'solver': solver_settings_from(settings)
    }
    data.update(_collect(settings, 'Ldmma', _LDMMA_KEYS))

    majorization = settings.read('Ldmma', 'Majorization') if settings is not None else None
    if majorization is not None:
        data['majorization'] = MajorizationKind(majorization)
    fallback = settings.read('Ldmma', 'Fallback') if settings is not None else None
    if fallback is not None:
        data['fallback'] = fallback

    epsilon = settings.read('Ldmma', f'Epsilon.{model.kind.value}') if settings is not None else None
    if epsilon is not None:
        data['epsilon'] = epsilon

    data.update({key: value for key, value in overrides.items() if value is not None})
    return RunConfig(**data)

