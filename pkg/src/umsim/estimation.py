"""Channel estimators: LS, oracle LMMSE and OAMP, plus fixed-point diagnostics."""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_generator, check_complex_array, check_count, check_full_row_rank, check_positive
from .denoisers import divergence_of
from .exceptions import DivergenceError, InvalidParameterError, NumericalRankError, ShapeError

VAR_FLOOR = 1e-12
NMSE_FLOOR_DB = -300.0


@dataclass
class EstimatorReport:
    estimate: np.ndarray = field(repr=False)
    per_iteration_residual: list
    iterations_used: int
    converged: bool
    effective_noise_track: list
    denoiser_noise_track: list = field(default_factory=list)
    options: dict = field(default_factory=dict)


def _matrix(M):
    return check_complex_array(getattr(M, "matrix", M), 2, "M")


def _noise(M, noise_variance):
    if noise_variance is None:
        noise_variance = getattr(M, "noise_variance", None)
        if noise_variance is None:
            raise InvalidParameterError("noise_variance is required")
    return check_positive(noise_variance, "noise_variance", strict=False)


def _match(M, y):
    y = check_complex_array(y, 1, "y", allow_batch=True)
    if y.shape[-1] != M.shape[0]:
        raise ShapeError(f"y has length {y.shape[-1]}, M has {M.shape[0]} rows")
    return y


def ls_estimate(M, y):
    """Minimum-norm least squares ``M^+ y``."""
    A = _matrix(M)
    y = _match(A, y)
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    if A.shape[0] > A.shape[1] or s[-1] <= 1e-10 * s[0]:
        raise NumericalRankError("M is not of full row rank")
    return ((y @ U.conj()) / s) @ Vh.conj()


def _lmmse_filter(A, C, s2):
    C = check_complex_array(C, 2, "covariance")
    if C.shape != (A.shape[1], A.shape[1]):
        raise ShapeError("covariance must be N x N")
    CA = C @ A.conj().T
    inner = A @ CA + s2 * np.eye(A.shape[0])
    ev = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        raise NumericalRankError("M C M^H + s2 I is singular")
    return sla.solve(inner, CA.conj().T, assume_a="her").conj().T


def lmmse_estimate(M, y, covariance, noise_variance=None, mean=None):
    """``mu + C M^H (M C M^H + s2 I)^-1 (y - M mu)``."""
    A = _matrix(M)
    y = _match(A, y)
    s2 = _noise(M, noise_variance)
    G = _lmmse_filter(A, covariance, s2)
    if mean is None:
        return y @ G.T
    mean = np.asarray(mean, dtype=np.complex128)
    return mean + (y - mean @ A.T) @ G.T


def lmmse_mse(M, covariance, noise_variance=None):
    """Expected squared error ``tr(C - C M^H (M C M^H + s2 I)^-1 M C)``."""
    A = _matrix(M)
    G = _lmmse_filter(A, covariance, _noise(M, noise_variance))
    C = np.asarray(covariance)
    return float(np.real(np.trace(C - G @ A @ C)))


def nmse(h_hat, h):
    """Normalised squared error in dB, floored at -300 dB for an exact estimate."""
    h_hat = np.asarray(h_hat)
    h = np.asarray(h)
    if h_hat.shape != h.shape:
        raise ShapeError("estimate and truth differ in shape")
    den = np.vdot(h, h).real
    if den == 0:
        raise InvalidParameterError("true channel is zero")
    num = np.vdot(h_hat - h, h_hat - h).real
    if num == 0:
        return NMSE_FLOOR_DB
    return max(float(10 * np.log10(num / den)), NMSE_FLOOR_DB)


# -- OAMP -------------------------------------------------------------------

def oamp_core(A, y, noise_variance, nle, max_iter=50, tol=1e-6, damping=0.7, v0=None):
    """De-correlated OAMP over a batch.

    ``A`` is ``(B, m, n)``, ``y`` is ``(B, m)`` and ``noise_variance`` a scalar or
    ``(B,)``. ``nle(r, tau2)`` takes ``r (B, n)``, ``tau2 (B,)`` and returns the
    denoised estimate and its per-row divergence. Returns the final estimate,
    the last denoiser input and noise level, and per-row traces.
    """
    B, m, n = A.shape
    s2 = np.broadcast_to(np.asarray(noise_variance, dtype=float), (B,)).copy()
    AH = np.conj(np.swapaxes(A, -1, -2))
    s, U = np.linalg.eigh(A @ AH)
    s = np.clip(s, 0.0, None)
    AHU = AH @ U
    UH = np.conj(np.swapaxes(U, -1, -2))

    if v0 is None:
        tr = np.sum(s, axis=-1)
        v2 = (np.sum(np.abs(y) ** 2, axis=-1) - m * s2) / np.maximum(tr, VAR_FLOOR)
    else:
        v2 = np.broadcast_to(np.asarray(v0, dtype=float), (B,)).copy()
    v2 = np.maximum(v2, VAR_FLOOR)

    h = np.zeros((B, n), dtype=np.complex128)
    est_prev = np.zeros((B, n), dtype=np.complex128)
    active = np.ones(B, dtype=bool)
    residuals = [[] for _ in range(B)]
    v_track = [[] for _ in range(B)]
    t_track = [[] for _ in range(B)]
    iters = np.zeros(B, dtype=int)
    est = est_prev
    r = h
    tau2 = v2

    for it in range(1, max_iter + 1):
        resid = y - np.einsum("bmn,bn->bm", A, h)
        c = np.einsum("bij,bj->bi", UH, resid)
        g = v2[:, None] / (v2[:, None] * s + s2[:, None])
        t_tr = np.maximum(np.sum(s * g, axis=-1), VAR_FLOOR)
        r_new = h + (n / t_tr)[:, None] * np.einsum("bnm,bm->bn", AHU, g * c)
        tau2_new = np.maximum(v2 * (n / t_tr - 1.0), VAR_FLOOR)

        est_new, div = nle(r_new, tau2_new)
        alpha = np.clip(np.asarray(div, dtype=float) / n, 0.0, 1.0 - 1e-12)
        h_ext = (est_new - alpha[:, None] * r_new) / (1.0 - alpha[:, None])
        v2_new = np.maximum(tau2_new * alpha / (1.0 - alpha), VAR_FLOOR)

        bad = ~(np.all(np.isfinite(est_new), axis=-1) & np.all(np.isfinite(h_ext), axis=-1)
                & np.isfinite(tau2_new) & np.isfinite(v2_new)) & active
        if bad.any():
            raise DivergenceError("OAMP produced a non-finite state", it)

        nprev = np.linalg.norm(est_prev, axis=-1)
        nd = np.linalg.norm(est_new - est_prev, axis=-1)
        res = np.where(nprev > 0, nd / np.where(nprev > 0, nprev, 1.0), np.where(nd > 0, np.inf, 0.0))

        a = active
        h[a] = damping * h_ext[a] + (1.0 - damping) * h[a]
        v2[a] = v2_new[a]
        r = np.where(a[:, None], r_new, r)
        tau2 = np.where(a, tau2_new, tau2)
        est = np.where(a[:, None], est_new, est_prev)
        for b in np.flatnonzero(a):
            residuals[b].append(float(res[b]))
            v_track[b].append(float(v2_new[b]))
            t_track[b].append(float(tau2_new[b]))
        iters[a] = it
        est_prev = est
        active = a & ~(res < tol)
        if not active.any():
            break

    converged = np.array([len(rb) > 0 and rb[-1] < tol for rb in residuals])
    return {
        "estimate": est, "r": r, "tau2": tau2, "residuals": residuals,
        "v2_track": v_track, "tau2_track": t_track, "iterations": iters, "converged": converged,
    }


def _wrap_denoiser(denoiser, n_probes, rng):
    rng = as_generator(rng)

    def nle(r, tau2):
        outs, divs = [], []
        for rb, tb in zip(r, tau2):
            outs.append(denoiser(rb, float(tb)))
            divs.append(divergence_of(denoiser, rb, float(tb), n_probes, rng))
        return np.stack(outs), np.asarray(divs)

    return nle


def oamp_estimate(M, y, denoiser, noise_variance=None, max_iter=50, tol=1e-6, damping=0.7,
                  v0=None, n_probes=1, rng=None):
    """Estimate ``h`` from ``y = M h + n`` by OAMP with a plug-in denoiser.

    Each iteration runs the trace-normalised LMMSE linear stage, then the
    divergence-corrected denoiser at the tracked effective noise level.
    ``damping`` is the weight on the new extrinsic iterate.
    """
    A = _matrix(M)
    y = _match(A, y)
    if y.ndim != 1:
        raise ShapeError("oamp_estimate takes a single observation; use OAMPEstimator for batches")
    s2 = _noise(M, noise_variance)
    max_iter = check_count(max_iter, "max_iter")
    if not 0 < damping <= 1:
        raise InvalidParameterError("damping must lie in (0, 1]")
    out = oamp_core(A[None], y[None], s2, _wrap_denoiser(denoiser, n_probes, rng),
                    max_iter=max_iter, tol=tol, damping=damping, v0=v0)
    return EstimatorReport(
        estimate=out["estimate"][0],
        per_iteration_residual=out["residuals"][0],
        iterations_used=int(out["iterations"][0]),
        converged=bool(out["converged"][0]),
        effective_noise_track=out["v2_track"][0],
        denoiser_noise_track=out["tau2_track"][0],
        options={"max_iter": max_iter, "tol": tol, "damping": damping,
                 "v0": v0, "n_probes": n_probes},
    )


def oamp_iteration_map(M, y, denoiser, v2, noise_variance=None, damping=1.0):
    """One OAMP iteration ``h_t -> h_{t+1}`` with the variance state frozen at ``v2``."""
    A = _matrix(M)
    y = _match(A, y)
    s2 = _noise(M, noise_variance)
    n = A.shape[1]
    What = v2 * A.conj().T @ np.linalg.inv(v2 * A @ A.conj().T + s2 * np.eye(A.shape[0]))
    t_tr = float(np.real(np.trace(What @ A)))
    W = (n / t_tr) * What
    tau2 = max(v2 * (n / t_tr - 1.0), VAR_FLOOR)

    def step(h):
        r = h + W @ (y - A @ h)
        est = denoiser(r, tau2)
        alpha = min(max(divergence_of(denoiser, r, tau2) / n, 0.0), 1.0 - 1e-12)
        ext = (est - alpha * r) / (1.0 - alpha)
        return damping * ext + (1.0 - damping) * h

    return step


def lipschitz_probe(operator, domain_sampler, n_pairs, rng=None):
    """Largest observed ``||T(u) - T(v)|| / ||u - v||`` over random pairs.

    This is a lower bound on the Lipschitz constant, not a certificate.
    """
    rng = as_generator(rng)
    best = 0.0
    for _ in range(check_count(n_pairs, "n_pairs")):
        u, v = domain_sampler(rng), domain_sampler(rng)
        d = np.linalg.norm(u - v)
        if d == 0:
            continue
        best = max(best, float(np.linalg.norm(operator(u) - operator(v)) / d))
    return best


# -- scikit-learn style wrappers ----------------------------------------------

class _ChannelEstimator(RegressorMixin, BaseEstimator):
    """Common ``fit(M)`` / ``predict(Y)`` plumbing; rows of ``Y`` are observations."""

    def _fit_operator(self, M):
        self.M_ = _matrix(M)
        self.n_features_in_ = self.M_.shape[0]
        return self.M_

    def _rows(self, Y):
        check_is_fitted(self, "M_")
        Y = _match(self.M_, Y)
        return Y, Y.ndim == 1

    def score(self, Y, H):
        """Negative mean NMSE in dB (higher is better)."""
        est = np.atleast_2d(self.predict(Y))
        H = np.atleast_2d(H)
        return -float(np.mean([nmse(a, b) for a, b in zip(est, H)]))


class LeastSquaresEstimator(_ChannelEstimator):
    def fit(self, M, y=None):
        A = self._fit_operator(M)
        check_full_row_rank(A)
        self.pinv_ = np.linalg.pinv(A)
        return self

    def predict(self, Y):
        Y, _ = self._rows(Y)
        return Y @ self.pinv_.T


class LMMSEEstimator(_ChannelEstimator):
    """Linear MMSE estimator.

    With ``covariance=None`` the covariance is estimated from
    ``channel_samples`` passed to :meth:`fit` (the sample-covariance variant).
    """

    def __init__(self, covariance=None, noise_variance=None):
        self.covariance = covariance
        self.noise_variance = noise_variance

    def fit(self, M, channel_samples=None):
        A = self._fit_operator(M)
        if self.covariance is not None:
            C = np.asarray(self.covariance, dtype=np.complex128)
        elif channel_samples is not None:
            X = check_complex_array(channel_samples, 2, "channel_samples")
            C = X.T @ X.conj() / X.shape[0]
        else:
            raise InvalidParameterError("need a covariance or channel_samples")
        self.covariance_ = C
        self.filter_ = _lmmse_filter(A, C, _noise(M, self.noise_variance))
        return self

    def predict(self, Y):
        Y, _ = self._rows(Y)
        return Y @ self.filter_.T


class OAMPEstimator(_ChannelEstimator):
    def __init__(self, denoiser=None, noise_variance=None, max_iter=50, tol=1e-6, damping=0.7,
                 n_probes=1, random_state=None):
        self.denoiser = denoiser
        self.noise_variance = noise_variance
        self.max_iter = max_iter
        self.tol = tol
        self.damping = damping
        self.n_probes = n_probes
        self.random_state = random_state

    def fit(self, M, y=None):
        self._fit_operator(M)
        self.noise_variance_ = _noise(M, self.noise_variance)
        if self.denoiser is None:
            raise InvalidParameterError("OAMPEstimator needs a denoiser")
        return self

    def predict(self, Y):
        Y, single = self._rows(Y)
        rng = as_generator(self.random_state)
        self.reports_ = [
            oamp_estimate(self.M_, y, self.denoiser, self.noise_variance_, self.max_iter,
                          self.tol, self.damping, n_probes=self.n_probes, rng=rng)
            for y in np.atleast_2d(Y)
        ]
        est = np.stack([r.estimate for r in self.reports_])
        return est[0] if single else est
