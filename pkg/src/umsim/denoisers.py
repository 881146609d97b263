"""Denoisers for the AWGN problem ``r = h + CN(0, tau2 I)``.

A denoiser is called as ``f(r, tau2)``. ``divergence(r, tau2)`` returns the
complex-circular divergence ``sum_i Re(d f_i / d r_i)`` (half the real
divergence over the 2N real coordinates), or raises ``NotImplementedError``
when no closed form exists; :func:`mc_divergence` covers that case.
"""
import numpy as np

from ._validation import as_generator, check_count
from .priors import tweedie_denoise


class Denoiser:
    has_divergence = False

    def __call__(self, r, noise_var):
        raise NotImplementedError

    def divergence(self, r, noise_var):
        raise NotImplementedError(f"{type(self).__name__} has no analytic divergence")


class IdentityDenoiser(Denoiser):
    has_divergence = True

    def __call__(self, r, noise_var):
        return np.array(r, dtype=np.complex128)

    def divergence(self, r, noise_var):
        return float(np.shape(r)[-1])


class LinearShrinkage(Denoiser):
    """``f(r) = a * r`` for real ``a``."""

    has_divergence = True

    def __init__(self, a):
        self.a = float(a)

    def __call__(self, r, noise_var):
        return self.a * np.asarray(r, dtype=np.complex128)

    def divergence(self, r, noise_var):
        return self.a * np.shape(r)[-1]


class TweedieDenoiser(Denoiser):
    """MMSE denoiser of an analytic prior, evaluated through its smoothed score."""

    has_divergence = True

    def __init__(self, prior):
        self.prior = prior

    def __call__(self, r, noise_var):
        return tweedie_denoise(self.prior, r, noise_var)

    def divergence(self, r, noise_var):
        return self.prior.divergence(r, noise_var)


class FunctionDenoiser(Denoiser):
    """Wrap a bare callable ``f(r, tau2)``; divergence is left to Monte Carlo."""

    def __init__(self, func):
        self.func = func

    def __call__(self, r, noise_var):
        return self.func(r, noise_var)


def sign_probes(rng, n_probes, dimension):
    """Complex probes ``(s1 + j s2) / sqrt(2)`` with Rademacher ``s1, s2``.

    ``E[b b^H] = I`` and ``E[b b^T] = 0``, so ``E[b^H J b] = tr J``.
    """
    s = rng.integers(0, 2, size=(n_probes, dimension, 2)) * 2.0 - 1.0
    return (s[..., 0] + 1j * s[..., 1]) / np.sqrt(2.0)


def mc_divergence(func, r, noise_var, n_probes=1, rng=None, eps=None):
    """Monte Carlo estimate of ``sum_i Re(d f_i / d r_i)`` at ``r``.

    ``func`` maps a vector to a vector. The default step is
    ``1e-3 * sigma * (1 + ||r|| / sqrt(N))``.
    """
    rng = as_generator(rng)
    n_probes = check_count(n_probes, "n_probes")
    r = np.asarray(r, dtype=np.complex128)
    n = r.shape[-1]
    if eps is None:
        eps = 1e-3 * np.sqrt(noise_var) * (1.0 + np.linalg.norm(r) / np.sqrt(n))
    f0 = func(r)
    total = 0.0
    for b in sign_probes(rng, n_probes, n):
        total += np.real(np.vdot(b, func(r + eps * b) - f0)) / eps
    return float(total / n_probes)


def divergence_of(denoiser, r, noise_var, n_probes=1, rng=None):
    """Analytic divergence when available, otherwise a Monte Carlo probe."""
    if getattr(denoiser, "has_divergence", False):
        return float(denoiser.divergence(r, noise_var))
    return mc_divergence(lambda x: denoiser(x, noise_var), r, noise_var, n_probes, rng)
