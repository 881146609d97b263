"""RF-chain-limited pilot observations ``y = M h + n`` and the DFT dictionary."""
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import as_generator, check_complex_array, check_count, check_positive, crandn
from .exceptions import InvalidParameterError, ShapeError

STRUCTURES = ("phase_shifter", "gaussian", "identity")


@dataclass(frozen=True)
class MeasurementOperator:
    """An ``m x N`` pilot operator with its noise variance.

    Multi-slot pilot stacking is represented by row-block concatenation.
    """

    matrix: np.ndarray = field(repr=False)
    noise_variance: float = 0.0
    structure: str = "custom"

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def undersampling_ratio(self):
        m, n = self.matrix.shape
        return m / n

    def with_noise(self, noise_variance):
        return replace(self, noise_variance=check_positive(noise_variance, "noise_variance", strict=False))

    def stack(self, other):
        """Row-block concatenation of two pilot slots sharing the noise level."""
        if other.matrix.shape[1] != self.matrix.shape[1]:
            raise ShapeError("operators must act on the same channel dimension")
        return replace(self, matrix=np.vstack([self.matrix, other.matrix]), structure="stacked")


def n_measurements(n, ratio):
    """Row count for an undersampling ratio: ``floor(ratio * N)`` (at least 1)."""
    m = int(np.floor(ratio * n + 1e-9))
    return max(m, 1)


def build_pilot_operator(n, ratio, structure="phase_shifter", rng=None, noise_variance=0.0):
    n = check_count(n, "N")
    if not 0 < ratio <= 1:
        raise InvalidParameterError(f"ratio must lie in (0, 1], got {ratio}")
    if structure not in STRUCTURES:
        raise InvalidParameterError(f"unknown structure {structure!r}")
    rng = as_generator(rng)
    m = n_measurements(n, ratio)
    if structure == "identity":
        if m != n:
            raise InvalidParameterError("identity structure requires ratio = 1")
        mat = np.eye(n, dtype=np.complex128)
    elif structure == "phase_shifter":
        mat = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(m, n))) / np.sqrt(n)
    else:
        mat = crandn(rng, (m, n), 1.0 / n)
    return MeasurementOperator(mat, check_positive(noise_variance, "noise_variance", strict=False), structure)


def observe(op, h, rng=None):
    """Return ``M h + n`` with ``n ~ CN(0, s2 I)``; exact ``M h`` when ``s2 = 0``."""
    h = check_complex_array(h, 1, "h", allow_batch=True)
    if h.shape[-1] != op.matrix.shape[1]:
        raise ShapeError(f"h has length {h.shape[-1]}, operator expects {op.matrix.shape[1]}")
    y = h @ op.matrix.T
    if op.noise_variance > 0:
        y = y + crandn(as_generator(rng), y.shape, op.noise_variance)
    return y


def noise_variance_for_snr(M, h, snr_db):
    """Noise variance giving received SNR ``||M h||^2 / (m s2)`` of ``snr_db``."""
    M = np.asarray(getattr(M, "matrix", M))
    mh = M @ np.asarray(h)
    return float(np.vdot(mh, mh).real / (M.shape[0] * 10.0 ** (snr_db / 10.0)))


def received_snr_db(M, h, noise_variance):
    M = np.asarray(getattr(M, "matrix", M))
    mh = M @ np.asarray(h)
    return float(10 * np.log10(np.vdot(mh, mh).real / (M.shape[0] * noise_variance)))


def unitary_dft(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def dft_dictionary(geometry):
    """2-D unitary DFT over the virtual element grid, rows in element order.

    Column ``j`` is a 2-D Fourier atom; channel coefficients are ``F^H h``. The
    physical subarray gap is ignored so the transform stays unitary.
    """
    rows, cols = geometry.grid_shape
    kron = np.kron(unitary_dft(rows), unitary_dft(cols))
    gi = geometry.grid_indices
    return kron[gi[:, 0] * cols + gi[:, 1]]
