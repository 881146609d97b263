"""Input validation helpers.

scikit-learn's ``check_array`` rejects complex input, so the estimators in this
package validate through these instead.
"""
import numbers

import numpy as np

from .exceptions import InvalidParameterError, NumericalRankError, ShapeError


def check_complex_array(x, ndim=None, name="array", allow_batch=False):
    """Return ``x`` as a finite complex128 array with the requested rank.

    With ``allow_batch`` the array may carry one extra leading batch axis.
    """
    arr = np.asarray(x)
    if arr.dtype == object:
        raise InvalidParameterError(f"{name} must be numeric")
    arr = arr.astype(np.complex128, copy=False)
    if ndim is not None:
        ok = arr.ndim == ndim or (allow_batch and arr.ndim == ndim + 1)
        if not ok:
            raise ShapeError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidParameterError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise InvalidParameterError(f"{name} must be positive, got {value!r}")
    if not strict and value < 0:
        raise InvalidParameterError(f"{name} must be non-negative, got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise InvalidParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_full_row_rank(M, rtol=1e-10, name="M"):
    """Raise unless the smallest singular value exceeds ``rtol`` times the largest."""
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[-1] <= rtol * s[0] or M.shape[0] > M.shape[1]:
        raise NumericalRankError(f"{name} is not of full row rank")
    return s


def check_full_column_rank(H, rtol=1e-10, name="H"):
    s = np.linalg.svd(H, compute_uv=False)
    if H.shape[0] < H.shape[1] or s.size == 0 or s[-1] <= rtol * s[0]:
        raise NumericalRankError(f"{name} is not of full column rank")
    return s


def as_generator(rng):
    """Accept a Generator, a seed, or None (fresh entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def crandn(rng, shape, variance=1.0):
    """Circularly-symmetric complex Gaussian draws with the given variance."""
    z = rng.standard_normal(shape + (2,) if isinstance(shape, tuple) else (shape, 2))
    return np.sqrt(variance / 2.0) * (z[..., 0] + 1j * z[..., 1])
