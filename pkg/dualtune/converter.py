"""Utility conversion functions for settings values and printed numbers"""

import math
from typing import Any


def float_to_str(value: float) -> str:
    """Returns the printed representation of a result value.

    Args:
        value (float): value to be printed

    Returns:
        str: 6 significant digits, 'inf', '-inf' or 'nan'
    """

    if math.isnan(value):
        return 'nan'
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return f'{value:.6g}'


def seconds_to_str(value: float) -> str:
    """Returns a compact wall-clock duration.

    Args:
        value (float): duration in seconds

    Returns:
        str: s.ss below one minute, m:ss.s otherwise
    """

    if value < 60.0:
        return f'{value:.2f}s'
    minutes, seconds = divmod(value, 60.0)
    return f'{int(minutes)}:{seconds:04.1f}'


def str_to_vector(value: str) -> list[float]:
    """Parses a comma or whitespace separated list of numbers.

    Args:
        value (str): e.g. '0.01, 0.01' or '1e-2 1e-2'

    Raises:
        ValueError: an entry is not a number

    Returns:
        list[float]: parsed values
    """

    return [float(token) for token in value.replace(',', ' ').split()]


def _is_int(value: str) -> bool:
    return value.lstrip('+-').isdigit()


def str_to_value(value: str) -> Any:
    """Converts a string to any value.
    Supported types:
    - bool
    - int
    - float
    - list of floats (comma separated)
    - str

    Args:
        value (str): Value to convert.

    Returns:
        Any: type of value, str if no conversion found.
    """

    if value is None:
        return None

    value = value.strip()
    try:
        if value in ['true', 'false']:
            return value == 'true'

        if _is_int(value):
            return int(value)

        if ',' in value:
            return str_to_vector(value)

        return float(value)

    except ValueError:
        return value
