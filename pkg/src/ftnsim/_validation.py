"""Small input-validation helpers shared by the public functions and estimators."""

import numpy as np

from .exceptions import ParameterError


def as_1d(x, name, dtype=None, allow_empty=False):
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ParameterError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ParameterError(f"{name} must not be empty")
    return arr


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return arr


def check_int(value, name, minimum=None):
    if isinstance(value, (bool, np.bool_)) or int(value) != value:
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_range(value, name, low=None, high=None, low_open=False, high_open=False):
    value = float(value)
    if not np.isfinite(value):
        raise ParameterError(f"{name} must be finite")
    if low is not None and (value < low or (low_open and value == low)):
        op = ">" if low_open else ">="
        raise ParameterError(f"{name} must be {op} {low}, got {value}")
    if high is not None and (value > high or (high_open and value == high)):
        op = "<" if high_open else "<="
        raise ParameterError(f"{name} must be {op} {high}, got {value}")
    return value


def check_bits(bits, name="bits"):
    arr = as_1d(bits, name)
    if not np.all((arr == 0) | (arr == 1)):
        raise ParameterError(f"{name} must contain only 0/1 values")
    return arr.astype(np.int8)
