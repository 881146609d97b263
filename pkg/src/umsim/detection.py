"""Multi-user uplink detection for ``y = H x + n`` over finite constellations.

Every detector accepts a single system (``H`` of shape ``(M, K)``) or a batch
(``(B, M, K)`` with ``y`` of shape ``(B, M)``); the batch form is what the
Monte Carlo drivers use.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_generator, check_complex_array, check_count, crandn
from .estimation import oamp_core
from .exceptions import (DivergenceError, InvalidParameterError, NumericalRankError,
                         SearchSpaceTooLargeError, ShapeError)

ML_GUARD = 2**20


@dataclass(frozen=True)
class Constellation:
    kind: str
    points: np.ndarray = field(repr=False)
    bits_per_symbol: int
    labels: tuple = field(default=(), repr=False)
    rotation: float = 0.0

    @property
    def size(self):
        return self.points.size

    @property
    def energy(self):
        return float(np.mean(np.abs(self.points) ** 2))

    def rotated(self, phase):
        """Same labelling with every point multiplied by ``exp(j phase)``."""
        return Constellation(self.kind, self.points * np.exp(1j * phase), self.bits_per_symbol, self.labels,
                             self.rotation + phase)

    def axis_levels(self):
        """Per-axis PAM levels of the derotated grid, or ``None`` if it is not a product grid."""
        base = self.points * np.exp(-1j * self.rotation)
        re_lv = np.unique(np.round(base.real, 12))
        im_lv = np.unique(np.round(base.imag, 12))
        if re_lv.size * im_lv.size != self.size or not np.allclose(re_lv, im_lv, atol=1e-12):
            return None
        return 0.5 * (re_lv + im_lv)

    def nearest(self, x):
        """Index of the closest point; ties go to the lowest index."""
        d = np.abs(np.asarray(x)[..., None] - self.points) ** 2
        return np.argmin(d, axis=-1)

    def sample(self, rng, shape):
        idx = as_generator(rng).integers(0, self.size, size=shape)
        return idx, self.points[idx]

    def posterior(self, r, tau2):
        """Mean and variance of ``x`` uniform on the points given ``r = x + CN(0, tau2)``.

        ``tau2`` broadcasts against ``r``.
        """
        r = np.asarray(r)
        t = np.broadcast_to(np.asarray(tau2, dtype=float), r.shape)[..., None]
        logits = -np.abs(r[..., None] - self.points) ** 2 / t
        p = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        mean = p @ self.points
        second = p @ (np.abs(self.points) ** 2)
        return mean, np.clip(second - np.abs(mean) ** 2, 0.0, None)


def _gray(nbits):
    return [i ^ (i >> 1) for i in range(2**nbits)]


def make_constellation(kind):
    """Unit-energy Gray-labelled QPSK or 16-QAM, ordered by label."""
    if kind == "qpsk":
        pts, labels = [], []
        for idx in range(4):
            b0, b1 = idx >> 1 & 1, idx & 1
            pts.append(((1 - 2 * b0) + 1j * (1 - 2 * b1)) / np.sqrt(2))
            labels.append((b0, b1))
        return Constellation("qpsk", np.array(pts), 2, tuple(labels))
    if kind == "qam16":
        # per axis: label -> level with Gray order 00,01,11,10 -> -3,-1,+1,+3
        levels = {g: lvl for g, lvl in zip(_gray(2), (-3, -1, 1, 3))}
        pts, labels = [], []
        for idx in range(16):
            hi, lo = idx >> 2, idx & 3
            pts.append((levels[hi] + 1j * levels[lo]) / np.sqrt(10))
            labels.append(tuple(int(b) for b in f"{idx:04b}"))
        return Constellation("qam16", np.array(pts), 4, tuple(labels))
    raise InvalidParameterError(f"unknown constellation {kind!r}")


@dataclass
class DetectionResult:
    hard_symbols: np.ndarray
    hard_indices: np.ndarray
    soft_means: np.ndarray = None
    soft_variances: np.ndarray = None
    iterations_used: int = 0


def _prepare(H, y, noise_variance):
    H = check_complex_array(H, 2, "H", allow_batch=True)
    y = check_complex_array(y, 1, "y", allow_batch=True)
    single = H.ndim == 2
    if single:
        H, y = H[None], y[None] if y.ndim == 1 else y
    if y.ndim == 1:
        y = y[None]
    if y.shape[0] != H.shape[0] and H.shape[0] == 1:
        H = np.broadcast_to(H, (y.shape[0],) + H.shape[1:])
    if y.shape != H.shape[:2]:
        raise ShapeError(f"y shape {y.shape} does not match H shape {H.shape}")
    s2 = None
    if noise_variance is not None:
        s2 = np.broadcast_to(np.asarray(noise_variance, dtype=float), (H.shape[0],)).copy()
        if np.any(s2 < 0) or not np.all(np.isfinite(s2)):
            raise InvalidParameterError("noise_variance must be finite and non-negative")
    return H, y, s2, single and y.shape[0] == 1


def _result(constellation, x, single, means=None, variances=None, iterations=0):
    idx = constellation.nearest(x)
    out = DetectionResult(constellation.points[idx], idx, means, variances, iterations)
    if single:
        out.hard_symbols, out.hard_indices = out.hard_symbols[0], out.hard_indices[0]
        if means is not None:
            out.soft_means, out.soft_variances = means[0], variances[0]
    return out


def _herm(H):
    return np.conj(np.swapaxes(H, -1, -2))


def linear_detect(method, H, y, noise_variance, constellation):
    """Zero-forcing or LMMSE equalisation followed by nearest-point slicing."""
    H, y, s2, single = _prepare(H, y, noise_variance)
    HH = _herm(H)
    if method == "zf":
        if H.shape[1] < H.shape[2]:
            raise NumericalRankError("zero forcing needs at least as many rows as users")
        s = np.linalg.svd(H, compute_uv=False)
        if np.any(s[:, -1] <= 1e-10 * s[:, 0]):
            raise NumericalRankError("H is not of full column rank")
        x = np.linalg.solve(HH @ H, np.einsum("bkm,bm->bk", HH, y)[..., None])[..., 0]
    elif method == "lmmse":
        es = constellation.energy
        G = HH @ H + (s2 / es)[:, None, None] * np.eye(H.shape[2])
        x = np.linalg.solve(G, np.einsum("bkm,bm->bk", HH, y)[..., None])[..., 0]
    else:
        raise InvalidParameterError(f"unknown linear method {method!r}")
    return _result(constellation, x, single)


def detect_amp(H, y, noise_variance, constellation, max_iter=30, tol=1e-6, damping=1.0):
    """AMP with Onsager correction and the exact constellation posterior as denoiser.

    The effective noise is ``(s2 ||H||_F^2 + v ||H^H H - I||_F^2) / K`` with ``v``
    the mean posterior variance; for ``H`` with i.i.d. ``CN(0, 1/M)`` entries this
    is the usual state evolution ``s2 + (K/M) v``, and it is exact in the first
    iteration of any system. The Onsager coefficient uses the same measured
    ``||H^H H - I||_F^2 / K`` in place of ``K/M``, so an orthonormal ``H``
    decouples exactly at every iteration.
    """
    H, y, s2, single = _prepare(H, y, noise_variance)
    B, M, K = H.shape
    HH = _herm(H)
    fro2 = np.sum(np.abs(H) ** 2, axis=(1, 2))
    gram_dev = np.sum(np.abs(HH @ H - np.eye(K)) ** 2, axis=(1, 2))
    beta = gram_dev / K
    es = constellation.energy

    x = np.zeros((B, K), dtype=np.complex128)
    v = np.full((B, K), es)
    z = y.copy()
    it = 0
    for it in range(1, max_iter + 1):
        vbar = v.mean(axis=1)
        tau2 = np.maximum((s2 * fro2 + vbar * gram_dev) / K, 1e-12)
        r = x + np.einsum("bkm,bm->bk", HH, z)
        x_new, v_new = constellation.posterior(r, tau2[:, None])
        if damping < 1.0:
            x_new = damping * x_new + (1 - damping) * x
            v_new = damping * v_new + (1 - damping) * v
        z = y - np.einsum("bmk,bk->bm", H, x_new) + (beta * v_new.mean(axis=1) / tau2)[:, None] * z
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z))):
            raise DivergenceError("AMP produced a non-finite state", it)
        change = np.max(np.abs(x_new - x))
        x, v = x_new, v_new
        if change < tol:
            break
    return _result(constellation, x, single, x, v, it)


def detect_oamp(H, y, noise_variance, constellation, max_iter=30, tol=1e-6, damping=1.0):
    """OAMP with the LMMSE linear stage and the divergence-free constellation denoiser."""
    H, y, s2, single = _prepare(H, y, noise_variance)
    if np.any(s2 <= 0):
        s2 = np.maximum(s2, 1e-12)

    def nle(r, tau2):
        mean, var = constellation.posterior(r, tau2[:, None])
        return mean, var.sum(axis=1) / tau2

    out = oamp_core(H, y, s2, nle, max_iter=max_iter, tol=tol, damping=damping, v0=constellation.energy)
    mean, var = constellation.posterior(out["r"], out["tau2"][:, None])
    return _result(constellation, mean, single, mean, var, int(out["iterations"].max()))


def detect_ep(H, y, noise_variance, constellation, damping=0.9, max_iter=20, var_floor=1e-12, tol=0.0):
    """Expectation propagation with one Gaussian site per real symbol coordinate.

    The complex model is stacked into its ``2M x 2K`` real form so that the
    in-phase and quadrature parts of each symbol get separate sites, with the
    PAM levels of the (derotated) square constellation as discrete priors.
    Each iteration inverts the ``2K x 2K`` posterior precision explicitly.
    ``damping`` is the weight on the new natural parameters; site updates
    with non-positive precision are skipped.
    """
    H, y, s2, single = _prepare(H, y, noise_variance)
    levels = constellation.axis_levels()
    if levels is None:
        raise InvalidParameterError("EP needs a square product-grid constellation")
    B, M, K = H.shape
    # a noiseless system is run at a tiny noise level relative to the signal
    fro2 = np.sum(np.abs(H) ** 2, axis=(1, 2))
    s2 = np.maximum(s2, 1e-10 * constellation.energy * fro2 / M)
    Hd = H * np.exp(1j * constellation.rotation)  # acts on the derotated symbols
    Hr = np.block([[Hd.real, -Hd.imag], [Hd.imag, Hd.real]])
    yr = np.concatenate([y.real, y.imag], axis=-1)
    half = (s2 / 2.0)[:, None]
    HrT = np.swapaxes(Hr, -1, -2)
    G = HrT @ Hr / half[:, :, None]
    b = np.einsum("bkm,bm->bk", HrT, yr) / half
    es = float(np.mean(levels**2))
    gamma = np.zeros((B, 2 * K))
    lam = np.full((B, 2 * K), 1.0 / es)
    eye = np.eye(2 * K)
    p_mean = np.zeros((B, 2 * K))
    p_var = np.full((B, 2 * K), es)
    it = 0
    for it in range(1, max_iter + 1):
        Sigma = np.linalg.inv(G + lam[:, :, None] * eye)
        mu = np.einsum("bij,bj->bi", Sigma, b + gamma)
        d = np.diagonal(Sigma, axis1=1, axis2=2)
        h2 = np.maximum(d / np.maximum(1.0 - d * lam, var_floor), var_floor)
        t = h2 * (mu / d - gamma)
        logits = -(t[..., None] - levels) ** 2 / (2.0 * h2[..., None])
        p = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        new_mean = p @ levels
        new_var = np.maximum(p @ levels**2 - new_mean**2, var_floor)
        lam_new = 1.0 / new_var - 1.0 / h2
        gamma_new = new_mean / new_var - t / h2
        ok = lam_new > 0
        lam_new = np.where(ok, lam_new, lam)
        gamma_new = np.where(ok, gamma_new, gamma)
        lam_next = damping * lam_new + (1 - damping) * lam
        gamma_next = damping * gamma_new + (1 - damping) * gamma
        if not (np.all(np.isfinite(lam_next)) and np.all(np.isfinite(gamma_next))):
            raise DivergenceError("EP natural parameters became non-finite", it)
        change = np.max(np.abs(new_mean - p_mean))
        lam, gamma = lam_next, gamma_next
        p_mean, p_var = new_mean, new_var
        if change < tol:
            break
    rot = np.exp(1j * constellation.rotation)
    means = (p_mean[:, :K] + 1j * p_mean[:, K:]) * rot
    variances = p_var[:, :K] + p_var[:, K:]
    return _result(constellation, means, single, means, variances, it)


def _hypotheses(constellation, K):
    total = constellation.size**K
    if total > ML_GUARD:
        raise SearchSpaceTooLargeError(f"{constellation.size}^{K} hypotheses exceed the 2^20 guard")
    idx = np.array(list(itertools.product(range(constellation.size), repeat=K)), dtype=np.int64)
    return idx, constellation.points[idx]


def detect_ml(H, y, constellation, chunk=4096):
    """Exhaustive ``argmin_x ||y - H x||^2``; ties go to the lowest lexicographic index."""
    H, y, _, single = _prepare(H, y, None)
    B, M, K = H.shape
    idx, X = _hypotheses(constellation, K)
    best = np.empty(B, dtype=np.int64)
    step = max(1, chunk * 64 // max(X.shape[0], 1))
    for lo in range(0, B, step):
        Hb, yb = H[lo:lo + step], y[lo:lo + step]
        pred = np.einsum("bmk,hk->bhm", Hb, X)
        cost = np.sum(np.abs(yb[:, None, :] - pred) ** 2, axis=-1)
        best[lo:lo + step] = np.argmin(cost, axis=1)
    sel = idx[best]
    out = DetectionResult(constellation.points[sel], sel)
    if single:
        out.hard_symbols, out.hard_indices = out.hard_symbols[0], out.hard_indices[0]
    return out


def ser(decided, truth):
    """Fraction of positions where the decided symbol differs from the truth."""
    decided = np.asarray(decided)
    truth = np.asarray(truth)
    if decided.shape != truth.shape:
        raise ShapeError("decided and truth differ in shape")
    if decided.size == 0:
        raise ShapeError("empty symbol vectors")
    return float(np.mean(decided != truth))


def iid_channel(rng, n_rx, n_tx, batch=None):
    """``CN(0, 1/n_rx)`` entries, the normalisation AMP's state evolution assumes."""
    shape = (n_rx, n_tx) if batch is None else (batch, n_rx, n_tx)
    return crandn(as_generator(rng), shape, 1.0 / n_rx)


def ill_conditioned_channel(rng, n_rx, n_tx, condition_number, batch=None):
    """Haar singular vectors with log-spaced singular values; ``||H||_F^2 = n_tx``."""
    rng = as_generator(rng)
    B = 1 if batch is None else batch
    k = min(n_rx, n_tx)
    s = np.logspace(0, -np.log10(condition_number), k)
    s *= np.sqrt(n_tx / np.sum(s**2))
    U, _ = np.linalg.qr(crandn(rng, (B, n_rx, n_rx)))
    V, _ = np.linalg.qr(crandn(rng, (B, n_tx, n_tx)))
    S = np.zeros((n_rx, n_tx))
    S[np.arange(k), np.arange(k)] = s
    H = U @ S @ _herm(V)
    return H[0] if batch is None else H


def noise_variance_for_snr(H, snr_db, energy=1.0):
    """Per-antenna received SNR: ``E_s ||H||_F^2 / (M s2)``."""
    H = np.asarray(H)
    fro2 = np.sum(np.abs(H) ** 2, axis=(-2, -1))
    return energy * fro2 / (H.shape[-2] * 10.0 ** (np.asarray(snr_db) / 10.0))


def simulate_block(rng, H, constellation, noise_variance):
    """Draw symbols and noise for ``H`` (single or batch); returns ``(idx, x, y)``."""
    rng = as_generator(rng)
    K = H.shape[-1]
    idx, x = constellation.sample(rng, H.shape[:-2] + (K,))
    n = crandn(rng, H.shape[:-1], 1.0) * np.sqrt(np.asarray(noise_variance))[..., None]
    y = np.einsum("...mk,...k->...m", H, x) + n
    return idx, x, y


DETECTORS = ("zf", "lmmse", "amp", "oamp", "ep", "ml")


def detect(name, H, y, noise_variance, constellation, **opts):
    """Dispatch by detector name."""
    if name in ("zf", "lmmse"):
        return linear_detect(name, H, y, noise_variance, constellation)
    if name == "amp":
        return detect_amp(H, y, noise_variance, constellation, **opts)
    if name == "oamp":
        return detect_oamp(H, y, noise_variance, constellation, **opts)
    if name == "ep":
        return detect_ep(H, y, noise_variance, constellation, **opts)
    if name == "ml":
        return detect_ml(H, y, constellation)
    raise InvalidParameterError(f"unknown detector {name!r}")


# -- scikit-learn style wrappers ----------------------------------------------

class SymbolDetector(ClassifierMixin, BaseEstimator):
    """``fit(H, noise_variance)`` then ``predict(Y)`` for rows of received vectors.

    ``predict`` returns constellation indices, ``predict_symbols`` the points.
    """

    def __init__(self, method="lmmse", constellation="qpsk", max_iter=None, damping=None):
        self.method = method
        self.constellation = constellation
        self.max_iter = max_iter
        self.damping = damping

    def _constellation(self):
        c = self.constellation
        return make_constellation(c) if isinstance(c, str) else c

    def fit(self, H, noise_variance=None):
        if self.method not in DETECTORS:
            raise InvalidParameterError(f"unknown detector {self.method!r}")
        self.H_ = check_complex_array(H, 2, "H")
        self.noise_variance_ = None if noise_variance is None else float(noise_variance)
        if self.noise_variance_ is None and self.method != "ml":
            raise InvalidParameterError(f"{self.method} needs noise_variance")
        self.constellation_ = self._constellation()
        self.classes_ = np.arange(self.constellation_.size)
        return self

    def _detect(self, Y):
        check_is_fitted(self, "H_")
        Y = np.atleast_2d(check_complex_array(Y, 1, "Y", allow_batch=True))
        H = np.broadcast_to(self.H_, (Y.shape[0],) + self.H_.shape)
        opts = {k: v for k, v in (("max_iter", self.max_iter), ("damping", self.damping)) if v is not None}
        return detect(self.method, H, Y, self.noise_variance_, self.constellation_, **opts)

    def predict(self, Y):
        return self._detect(Y).hard_indices

    def predict_symbols(self, Y):
        return self._detect(Y).hard_symbols

    def score(self, Y, symbols):
        """One minus the symbol error rate against true constellation points."""
        return 1.0 - ser(self.predict_symbols(Y), np.atleast_2d(symbols))
