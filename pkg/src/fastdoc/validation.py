"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import DimensionMismatch

SYMMETRY_RTOL = 1e-10


def check_block(a, name="block", ndim=2, copy=False):
    """Return ``a`` as a finite, C-contiguous float64 array of dimension ``ndim``."""
    arr = np.array(a, dtype=np.float64, copy=copy, order="C") if copy else np.ascontiguousarray(a, dtype=np.float64)
    if ndim == 2 and arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_square(a, name="block"):
    arr = check_block(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def is_symmetric(a, rtol=SYMMETRY_RTOL):
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return True
    return np.linalg.norm(a - a.T) <= rtol * scale


def check_symmetric(a, name="block", rtol=SYMMETRY_RTOL):
    arr = check_square(a, name)
    if not is_symmetric(arr, rtol):
        raise ValueError(f"{name} is not symmetric within relative tolerance {rtol:g}")
    return arr


def check_vector(v, size=None, name="vector"):
    arr = check_block(v, name, ndim=1)
    if size is not None and arr.shape[0] != size:
        raise DimensionMismatch(f"{name} must have length {size}, got {arr.shape[0]}")
    return arr


def check_positive_int(value, name):
    if int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_rows(a, rows, name):
    if a.shape[0] != rows:
        raise DimensionMismatch(f"{name} must have {rows} rows, got {a.shape[0]}")
    return a
