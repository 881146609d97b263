"""Analytic channel priors: exact sampling, smoothed scores and MMSE denoisers.

All priors are over circularly-symmetric complex vectors. For ``y = h + n`` with
``n ~ CN(0, s2 I)`` the smoothed density ``p_s2`` is the prior convolved with the
noise, and the score is its Wirtinger gradient ``d log p_s2 / d y*``. With this
convention Tweedie's formula reads ``E[h | y] = y + s2 * score(y)`` and the
Gaussian case reduces to the Wiener filter.
"""
import numpy as np
from scipy.special import logsumexp

from ._validation import as_generator, check_complex_array, check_count, check_positive, crandn
from .exceptions import InvalidParameterError, ShapeError, UnsupportedEvaluationError


class GaussianPrior:
    """``h ~ CN(mean, covariance)``."""

    family = "gaussian"

    def __init__(self, mean, covariance):
        cov = check_complex_array(covariance, 2, "covariance")
        n = cov.shape[0]
        if cov.shape != (n, n):
            raise ShapeError("covariance must be square")
        if not np.allclose(cov, cov.conj().T, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise InvalidParameterError("covariance must be Hermitian")
        cov = 0.5 * (cov + cov.conj().T)
        evals, evecs = np.linalg.eigh(cov)
        if evals.min() < -1e-10 * max(1.0, evals.max()):
            raise InvalidParameterError("covariance must be positive semidefinite")
        self.covariance = cov
        self.mean = np.broadcast_to(check_complex_array(mean, None, "mean"), (n,)).copy()
        self.dimension = n
        self._evals = np.clip(evals, 0.0, None)
        self._evecs = evecs

    @classmethod
    def white(cls, dimension, variance=1.0):
        n = check_count(dimension, "dimension")
        return cls(np.zeros(n), check_positive(variance, "variance") * np.eye(n))

    @classmethod
    def exponential(cls, dimension, correlation, variance=1.0):
        """Exponentially correlated entries: ``C_ij = variance * rho^|i - j|``."""
        n = check_count(dimension, "dimension")
        if not 0 <= correlation < 1:
            raise InvalidParameterError("correlation must lie in [0, 1)")
        idx = np.arange(n)
        return cls(np.zeros(n), variance * correlation ** np.abs(idx[:, None] - idx[None, :]))

    @property
    def mean_power(self):
        return float(np.real(np.trace(self.covariance)) / self.dimension + np.mean(np.abs(self.mean) ** 2))

    def sample(self, rng=None, size=None):
        rng = as_generator(rng)
        shape = (self.dimension,) if size is None else (size, self.dimension)
        z = crandn(rng, shape)
        return self.mean + (z * np.sqrt(self._evals)) @ self._evecs.T

    def _smoothed_eig(self, noise_var):
        lam = self._evals + noise_var
        if np.any(lam <= 0):
            raise UnsupportedEvaluationError("singular covariance has no density at zero noise")
        return lam

    def _coords(self, y):
        # eigen-coordinates of y - mean
        return (y - self.mean) @ self._evecs.conj()

    def _back(self, c):
        return c @ self._evecs.T

    def score(self, y, noise_var=0.0):
        y = _check_input(y, self.dimension)
        lam = self._smoothed_eig(check_positive(noise_var, "noise_var", strict=False))
        return self._back(-self._coords(y) / lam)

    def log_density(self, y, noise_var=0.0):
        y = _check_input(y, self.dimension)
        lam = self._smoothed_eig(check_positive(noise_var, "noise_var", strict=False))
        c = self._coords(y)
        return -np.sum(np.log(np.pi * lam)) - np.sum(np.abs(c) ** 2 / lam, axis=-1)

    def mmse_denoise(self, y, noise_var):
        y = _check_input(y, self.dimension)
        s2 = check_positive(noise_var, "noise_var")
        gain = self._evals / (self._evals + s2)
        return self.mean + self._back(gain * self._coords(y))

    def divergence(self, y, noise_var):
        """``Re tr`` of the denoiser Jacobian, ``tr(C (C + s2 I)^-1)``."""
        s2 = check_positive(noise_var, "noise_var")
        return float(np.sum(self._evals / (self._evals + s2)))

    def posterior_variance(self, y, noise_var):
        """Diagonal of the posterior covariance ``C - C (C + s2 I)^-1 C``."""
        s2 = check_positive(noise_var, "noise_var")
        d = self._evals * s2 / (self._evals + s2)
        v = np.real(np.sum(np.abs(self._evecs) ** 2 * d, axis=1))
        y = np.asarray(y)
        return np.broadcast_to(v, y.shape).copy()


class GaussianMixturePrior:
    """Entries i.i.d. from ``sum_c w_c CN(mu_c, v_c)``."""

    family = "gaussian_mixture"
    _allow_spike = False

    def __init__(self, weights, means, variances, dimension):
        w = np.asarray(weights, dtype=float).ravel()
        mu = np.asarray(means, dtype=np.complex128).ravel()
        v = np.asarray(variances, dtype=float).ravel()
        if not (w.size == mu.size == v.size) or w.size == 0:
            raise ShapeError("weights, means and variances need equal non-zero length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("mixture weights must be positive and sum to 1")
        if np.any(v < 0) or (not self._allow_spike and np.any(v <= 0)):
            raise InvalidParameterError("mixture variances must be positive")
        self.weights, self.means, self.variances = w, mu, v
        self.dimension = check_count(dimension, "dimension")

    @classmethod
    def gaussian(cls, dimension, variance=1.0, mean=0.0):
        return cls([1.0], [mean], [variance], dimension)

    @property
    def mean_power(self):
        return float(np.sum(self.weights * (self.variances + np.abs(self.means) ** 2)))

    @property
    def covariance(self):
        m = np.sum(self.weights * self.means)
        var = self.mean_power - abs(m) ** 2
        return var * np.eye(self.dimension)

    @property
    def mean(self):
        return np.full(self.dimension, np.sum(self.weights * self.means))

    def sample(self, rng=None, size=None):
        rng = as_generator(rng)
        shape = (self.dimension,) if size is None else (size, self.dimension)
        comp = rng.choice(self.weights.size, size=shape, p=self.weights)
        return self.means[comp] + crandn(rng, shape) * np.sqrt(self.variances[comp])

    def _responsibilities(self, y, noise_var):
        s = self.variances + noise_var
        if np.any(s <= 0):
            raise UnsupportedEvaluationError(
                f"{self.family} prior has a point mass; its density needs noise_var > 0"
            )
        d = y[..., None] - self.means
        logc = np.log(self.weights) - np.log(np.pi * s) - np.abs(d) ** 2 / s
        lse = logsumexp(logc, axis=-1)
        return np.exp(logc - lse[..., None]), d, s, lse

    def log_density(self, y, noise_var=0.0):
        y = _check_input(y, self.dimension)
        _, _, _, lse = self._responsibilities(y, check_positive(noise_var, "noise_var", strict=False))
        return np.sum(lse, axis=-1)

    def score(self, y, noise_var=0.0):
        y = _check_input(y, self.dimension)
        g, d, s, _ = self._responsibilities(y, check_positive(noise_var, "noise_var", strict=False))
        return -np.sum(g * d / s, axis=-1)

    def _posterior(self, y, noise_var):
        g, d, s, _ = self._responsibilities(y, noise_var)
        m_c = self.means + (self.variances / s) * d
        v_c = self.variances * noise_var / s
        mean = np.sum(g * m_c, axis=-1)
        second = np.sum(g * (v_c + np.abs(m_c) ** 2), axis=-1)
        return mean, np.clip(second - np.abs(mean) ** 2, 0.0, None)

    def mmse_denoise(self, y, noise_var):
        y = _check_input(y, self.dimension)
        return self._posterior(y, check_positive(noise_var, "noise_var"))[0]

    def posterior_variance(self, y, noise_var):
        y = _check_input(y, self.dimension)
        return self._posterior(y, check_positive(noise_var, "noise_var"))[1]

    def divergence(self, y, noise_var):
        s2 = check_positive(noise_var, "noise_var")
        return float(np.sum(self.posterior_variance(y, s2)) / s2)


class BernoulliGaussianPrior(GaussianMixturePrior):
    """Each entry is zero with probability ``1 - sparsity``, else ``CN(0, variance)``."""

    family = "bernoulli_gaussian"
    _allow_spike = True

    def __init__(self, sparsity, variance, dimension):
        if not 0 < sparsity <= 1:
            raise InvalidParameterError("sparsity must lie in (0, 1]")
        self.sparsity = float(sparsity)
        self.component_variance = check_positive(variance, "variance")
        if sparsity == 1:
            super().__init__([1.0], [0.0], [variance], dimension)
        else:
            super().__init__([1.0 - sparsity, sparsity], [0.0, 0.0], [0.0, variance], dimension)


def _check_input(y, dimension):
    y = check_complex_array(y, 1, "y", allow_batch=True)
    if y.shape[-1] != dimension:
        raise ShapeError(f"expected trailing dimension {dimension}, got {y.shape[-1]}")
    return y


def tweedie_denoise(prior, y, noise_var):
    """Posterior mean through the smoothed score: ``y + s2 * score(y)``."""
    s2 = check_positive(noise_var, "noise_var")
    y = _check_input(y, prior.dimension)
    return y + s2 * prior.score(y, s2)


def posterior_score(prior, h, y, noise_var):
    """Score of ``p(h | y)`` for ``y = h + n``: prior score plus likelihood score."""
    s2 = check_positive(noise_var, "noise_var")
    h = _check_input(h, prior.dimension)
    return prior.score(h, 0.0) + (np.asarray(y) - h) / s2


def make_prior(spec, dimension):
    """Build a prior from a config mapping (``family`` plus its parameters)."""
    fam = spec.get("family")
    if fam == "gaussian":
        rho = spec.get("correlation", 0.0)
        var = spec.get("variance", 1.0)
        if rho == 0:
            return GaussianPrior.white(dimension, var)
        return GaussianPrior.exponential(dimension, rho, var)
    if fam == "bernoulli_gaussian":
        return BernoulliGaussianPrior(spec["sparsity"], spec["variance"], dimension)
    if fam == "gaussian_mixture":
        means = spec.get("means") or [0.0] * len(spec["weights"])
        means = [complex(*m) if isinstance(m, (list, tuple)) else m for m in means]
        return GaussianMixturePrior(spec["weights"], means, spec["variances"], dimension)
    raise InvalidParameterError(f"unknown prior family {fam!r}")
