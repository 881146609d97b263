"""Downlink multi-user precoding: MRT, ZF and WMMSE, with the sum-rate objective.

``H`` is ``N x K`` with column ``k`` the channel of user ``k``; user ``k``
receives ``h_k^H W x + n``.
"""
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_generator, check_complex_array, check_count, check_positive, crandn
from .exceptions import BisectionError, InvalidParameterError, ShapeError

SCHEMES = ("mrt", "zf", "wmmse")


@dataclass
class BeamformerSet:
    precoders: np.ndarray = field(repr=False)
    total_power: float
    objective_trajectory: list = field(default_factory=list)
    scheme: str = ""
    iterations_used: int = 0

    @property
    def power(self):
        return float(np.sum(np.abs(self.precoders) ** 2))


def _channel(H):
    H = check_complex_array(H, 2, "H")
    if H.shape[1] < 1:
        raise ShapeError("H needs at least one user column")
    return H


def _unwrap(W):
    return W.precoders if isinstance(W, BeamformerSet) else np.asarray(W)


def sinr(H, W, noise_variance):
    """Per-user SINR of precoders ``W`` (``N x K``) over channels ``H``."""
    G = np.abs(np.conj(np.asarray(H)).T @ _unwrap(W)) ** 2  # G[k, j] = |h_k^H w_j|^2
    sig = np.diag(G)
    return sig / (G.sum(axis=1) - sig + noise_variance)


def sum_rate(H, W, noise_variance):
    """``sum_k log2(1 + SINR_k)`` in bit/s/Hz."""
    H = _channel(H)
    W = _unwrap(W)
    if W.shape != H.shape:
        raise ShapeError(f"precoders {W.shape} do not match channel {H.shape}")
    s2 = check_positive(noise_variance, "noise_variance")
    return float(np.sum(np.log2(1.0 + sinr(H, W, s2))))


def mrt(H, total_power):
    """Matched filter per user with equal power ``P / K``."""
    H = _channel(H)
    P = check_positive(total_power, "total_power")
    norms = np.linalg.norm(H, axis=0)
    if np.any(norms == 0):
        raise InvalidParameterError("a user channel is identically zero")
    W = H / norms * np.sqrt(P / H.shape[1])
    return BeamformerSet(W, P, scheme="mrt")


def zf_beamform(H, total_power):
    """Pseudo-inverse directions rescaled to equal per-user power."""
    H = _channel(H)
    P = check_positive(total_power, "total_power")
    n, k = H.shape
    if k > n:
        raise InvalidParameterError(f"ZF needs K <= N, got K={k}, N={n}")
    s = np.linalg.svd(H, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise InvalidParameterError("H is rank deficient")
    D = np.linalg.pinv(H).conj().T  # H (H^H H)^-1
    W = D / np.linalg.norm(D, axis=0) * np.sqrt(P / k)
    return BeamformerSet(W, P, scheme="zf")


def _tx_update(H, u, omega, P, tol=1e-13, max_bisect=200):
    """Beamformer block: ``w_k = omega_k u_k (A + mu I)^-1 h_k`` with the power multiplier.

    ``A = sum_j omega_j |u_j|^2 h_j h_j^H``. ``mu = 0`` is kept when it is
    feasible; otherwise ``mu`` is bisected on ``sum(|B|^2 / (lam + mu)^2) = P``
    and the feasible end of the final bracket is used.
    """
    A = (H * (omega * np.abs(u) ** 2)) @ H.conj().T
    lam, Q = np.linalg.eigh(0.5 * (A + A.conj().T))
    lam = np.clip(lam, 0.0, None)
    B = Q.conj().T @ (H * (omega * u))
    b2 = np.sum(np.abs(B) ** 2, axis=1)
    keep = lam > 1e-12 * max(lam[-1], 1e-300)

    def power(mu):
        if mu == 0:
            return float(np.sum(b2[keep] / lam[keep] ** 2))
        return float(np.sum(b2 / (lam + mu) ** 2))

    def solve(mu):
        if mu == 0:
            d = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
        else:
            d = 1.0 / (lam + mu)
        return Q @ (d[:, None] * B)

    if power(0.0) <= P:
        return solve(0.0), 0.0
    lo, hi = 0.0, np.sqrt(b2.sum() / P) * (1.0 + 1e-9)
    if not power(hi) <= P:
        raise BisectionError(f"upper bracket infeasible: power {power(hi):.6g} > {P:.6g} at mu={hi:.6g}")
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        if power(mid) > P:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return solve(hi), hi


def _wmmse_run(H, W, P, s2, max_iter, tol):
    rate = sum_rate(H, W, s2)
    traj = []
    it = 0
    for it in range(1, max_iter + 1):
        hw = np.conj(H).T @ W  # hw[k, j] = h_k^H w_j
        total = np.sum(np.abs(hw) ** 2, axis=1) + s2
        sig = np.diag(hw)
        u = sig / total
        e = 1.0 - np.real(np.conj(u) * sig)
        omega = 1.0 / np.maximum(e, 1e-300)
        W, _ = _tx_update(H, u, omega, P)
        new = sum_rate(H, W, s2)
        traj.append(new)
        done = abs(new - rate) <= tol * max(abs(rate), 1e-300)
        rate = new
        if done:
            break
    return W, traj, it


def wmmse(H, total_power, noise_variance, max_iter=200, tol=1e-6, restarts=3, rng=None):
    """Weighted-MMSE block-coordinate ascent on the sum rate.

    Restart 0 starts from MRT; each further restart perturbs MRT by a
    random complex Gaussian matrix and rescales to full power. The best
    final sum rate wins; its per-iteration sum rates form the trajectory.

    Every update lies in the column space of ``H``, so with ``K < N`` the
    iteration runs on the ``K x K`` factor ``R`` of ``H = Q R`` and maps back
    through ``Q``; perturbations are drawn in that subspace.
    """
    H = _channel(H)
    P = check_positive(total_power, "total_power")
    s2 = check_positive(noise_variance, "noise_variance")
    max_iter = check_count(max_iter, "max_iter")
    restarts = check_count(restarts, "restarts")
    rng = as_generator(rng)
    base = mrt(H, P).precoders
    Q = None
    if H.shape[1] < H.shape[0]:
        Q, Hs = np.linalg.qr(H)
        base = Q.conj().T @ base
    else:
        Hs = H
    best = None
    for r in range(restarts):
        W0 = base
        if r > 0:
            W0 = base + crandn(rng, base.shape, P / base.size)
            W0 = W0 * np.sqrt(P) / np.linalg.norm(W0)
        W, traj, it = _wmmse_run(Hs, W0, P, s2, max_iter, tol)
        if best is None or traj[-1] > best[1][-1]:
            best = (W, traj, it)
    W, traj, it = best
    if Q is not None:
        W = Q @ W
    return BeamformerSet(W, P, traj, scheme="wmmse", iterations_used=it)


def beamform(scheme, H, total_power, noise_variance=None, **opts):
    if scheme == "mrt":
        return mrt(H, total_power)
    if scheme == "zf":
        return zf_beamform(H, total_power)
    if scheme == "wmmse":
        return wmmse(H, total_power, noise_variance, **opts)
    raise InvalidParameterError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


class Beamformer(BaseEstimator):
    """Fit precoders to a channel matrix; ``score`` is the resulting sum rate."""

    def __init__(self, scheme="wmmse", total_power=1.0, noise_variance=1.0, max_iter=200, tol=1e-6,
                 restarts=3, random_state=None):
        self.scheme = scheme
        self.total_power = total_power
        self.noise_variance = noise_variance
        self.max_iter = max_iter
        self.tol = tol
        self.restarts = restarts
        self.random_state = random_state

    def fit(self, H, y=None):
        opts = {}
        if self.scheme == "wmmse":
            opts = dict(max_iter=self.max_iter, tol=self.tol, restarts=self.restarts, rng=self.random_state)
        self.beamformer_ = beamform(self.scheme, H, self.total_power, self.noise_variance, **opts)
        self.precoders_ = self.beamformer_.precoders
        return self

    def transform(self, X):
        """Precode symbol vectors: rows of ``X`` are length-K symbol vectors."""
        X = check_complex_array(X, 1, "X", allow_batch=True)
        return X @ self.precoders_.T

    def score(self, H, y=None):
        return sum_rate(H, self.precoders_, self.noise_variance)
