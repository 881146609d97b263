"""Blind risk estimates: SURE for ``y = h + n`` and GSURE for ``y = M h + n``.

Noise is ``CN(0, s2 I)``. Divergences are complex-circular
(``sum_i Re(d f_i / d y_i)``), which is why SURE carries ``2 s2 div``.
"""
import numpy as np

from ._validation import as_generator, check_complex_array, check_count, check_positive
from .denoisers import mc_divergence
from .exceptions import InvalidParameterError, NumericalRankError, ShapeError


def sure(denoiser, y, noise_variance, n_probes=1, rng=None):
    """``||y - f(y)||^2 - N s2 + 2 s2 div f(y)``, unbiased for ``E||f(y) - h||^2``."""
    s2 = check_positive(noise_variance, "noise_variance")
    y = check_complex_array(y, 1, "y")
    n = y.size
    fy = denoiser(y, s2)
    if getattr(denoiser, "has_divergence", False):
        div = denoiser.divergence(y, s2)
    else:
        div = mc_divergence(lambda x: denoiser(x, s2), y, s2, check_count(n_probes, "n_probes"), rng)
    return float(np.vdot(y - fy, y - fy).real - n * s2 + 2.0 * s2 * div)


class ProjectedGeometry:
    """Quantities of ``M`` reused across GSURE evaluations."""

    def __init__(self, M):
        A = check_complex_array(getattr(M, "matrix", M), 2, "M")
        m, n = A.shape
        U, s, Vh = np.linalg.svd(A, full_matrices=False)
        if m > n or s[-1] <= 1e-10 * s[0]:
            raise NumericalRankError("M is not of full row rank")
        self.matrix = A
        self.pinv = Vh.conj().T @ (U.conj().T / s[:, None])
        self.row_basis = Vh.conj().T  # orthonormal basis of the row space, N x m
        self.trace_inv_gram = float(np.sum(1.0 / s**2))  # tr((M M^H)^-1)

    def project(self, x):
        return self.row_basis @ (self.row_basis.conj().T @ x)


def gsure(denoiser, M, y, noise_variance, n_probes=1, rng=None, geometry=None):
    """Unbiased estimate of ``E||P (h_hat - h)||^2`` with ``P`` the row-space projector.

    ``denoiser`` maps the sufficient statistic ``u = M^H y / s2`` to ``h_hat``. If
    it exposes ``has_divergence`` its ``divergence(u)`` must return
    ``Re tr(P dh_hat/du)``; otherwise that trace is probed by Monte Carlo.

    The estimate is ``||P h_hat - M^+ y||^2 - s2 tr((M M^H)^-1) + 2 Re tr(P J)``.
    The middle term uses the known noise level only, so the criterion needs
    no access to ``h``.
    """
    s2 = check_positive(noise_variance, "noise_variance")
    geo = geometry if geometry is not None else ProjectedGeometry(M)
    A = geo.matrix
    y = check_complex_array(y, 1, "y")
    if y.size != A.shape[0]:
        raise ShapeError("y length does not match M")
    u = A.conj().T @ y / s2
    h_ml = geo.pinv @ y
    est = denoiser(u)
    if getattr(denoiser, "has_divergence", False):
        div = float(denoiser.divergence(u))
    else:
        rng = as_generator(rng)
        n = u.size
        eps = 1e-3 * (1.0 + np.linalg.norm(u) / np.sqrt(n)) / np.sqrt(s2)
        div = mc_divergence(lambda x: geo.project(denoiser(x)), u, s2, check_count(n_probes, "n_probes"),
                            rng, eps=eps)
    d = geo.project(est) - h_ml
    return float(np.vdot(d, d).real - s2 * geo.trace_inv_gram + 2.0 * div)


def projected_mse(M, h_hat, h, geometry=None):
    geo = geometry if geometry is not None else ProjectedGeometry(M)
    d = geo.project(np.asarray(h_hat) - np.asarray(h))
    return float(np.vdot(d, d).real)


class ShrinkageOfML:
    """``h_hat = a M^+ y`` written as a function of ``u = M^H y / s2``."""

    has_divergence = True

    def __init__(self, M, a, noise_variance, geometry=None):
        self.geo = geometry if geometry is not None else ProjectedGeometry(M)
        self.a = float(a)
        self.s2 = check_positive(noise_variance, "noise_variance")
        if self.a < 0:
            raise InvalidParameterError("shrinkage factor must be non-negative")
        # M^+ y = s2 (M^H M)^+ u
        self._op = self.s2 * self.geo.pinv @ self.geo.pinv.conj().T

    def __call__(self, u):
        return self.a * (self._op @ u)

    def divergence(self, u):
        return self.a * self.s2 * self.geo.trace_inv_gram
