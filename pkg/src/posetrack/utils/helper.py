from typing import Tuple

import numpy as np


def validate_positive_int(value: int, name: str) -> None:
    """
    Validates that a given value is a positive integer.

    :param value: The value to validate.
    :param name: The parameter name for error messages.
    """
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value <= 0:
        raise ValueError(f"{name} must be a positive integer.")


def validate_probability(value: float, name: str) -> None:
    """
    Validates that a value lies in [0, 1].

    :param value: The value to validate.
    :param name: The parameter name for error messages.
    """
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be a probability in [0, 1].")


def validate_range(bounds: Tuple[float, float], name: str) -> None:
    """
    Validates that a (low, high) pair is ordered.

    :param bounds: The pair to validate.
    :param name: The parameter name for error messages.
    """
    low, high = bounds
    if low > high:
        raise ValueError(f"{name} must be ordered as (low, high).")


def derive_rng(master_seed: int, index: int) -> np.random.Generator:
    """
    Counter-based generator for one sample, independent of iteration order.

    :param master_seed: Seed of the whole run.
    :param index: Sample index.

    :return: np.random.Generator
    """
    return np.random.default_rng([int(master_seed), int(index)])
