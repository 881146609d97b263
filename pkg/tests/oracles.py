"""Independent reference computations shared by the unit and acceptance tests."""
import math

import numpy as np
from scipy import integrate
from scipy.optimize import minimize

from umsim.beamforming import sum_rate
from umsim.channel import FarSource, array_response, subcarrier_frequencies
from umsim.geometry import SPEED_OF_LIGHT, build_aosa
from umsim.priors import GaussianMixturePrior, tweedie_denoise


def quadrature_posterior_mean(weights, means, variances, y, s2):
    """E[h | y] for scalar complex h by adaptive 2-D quadrature of the posterior."""
    comps = [(w / (math.pi * v), m.real, m.imag, 1.0 / v) for w, m, v in
             zip(weights, (complex(m) for m in means), variances)]
    yr, yi, inv_s2 = y.real, y.imag, 1.0 / s2

    def post(hr, hi):
        prior = 0.0
        for c, mr, mi, iv in comps:
            prior += c * math.exp(-((hr - mr) ** 2 + (hi - mi) ** 2) * iv)
        return prior * math.exp(-((yr - hr) ** 2 + (yi - hi) ** 2) * inv_s2)

    # posterior components are centred between each prior mean and y
    centres = [complex(m) + v / (v + s2) * (y - complex(m)) for m, v in zip(means, variances)]
    spread = max(math.sqrt(v * s2 / (v + s2)) for v in variances)
    lo_r = min(c.real for c in centres) - 10 * spread
    hi_r = max(c.real for c in centres) + 10 * spread
    lo_i = min(c.imag for c in centres) - 10 * spread
    hi_i = max(c.imag for c in centres) + 10 * spread
    opts = dict(epsabs=0, epsrel=1e-9)
    z = integrate.dblquad(lambda b, a: post(a, b), lo_r, hi_r, lo_i, hi_i, **opts)[0]
    mr = integrate.dblquad(lambda b, a: a * post(a, b), lo_r, hi_r, lo_i, hi_i, **opts)[0]
    mi = integrate.dblquad(lambda b, a: b * post(a, b), lo_r, hi_r, lo_i, hi_i, **opts)[0]
    return (mr + 1j * mi) / z


def mixture_quadrature_cases(n_cases, seed=7):
    rng = np.random.default_rng(seed)
    weights, means, variances = [0.5, 0.3, 0.2], [0.0, 1.0 + 0.5j, -0.8j], [0.4, 0.2, 1.0]
    prior = GaussianMixturePrior(weights, means, variances, 1)
    worst = 0.0
    for _ in range(n_cases):
        y = complex(rng.normal(0, 1.2) + 1j * rng.normal(0, 1.2))
        s2 = float(rng.uniform(0.05, 1.0))
        ref = quadrature_posterior_mean(weights, means, variances, y, s2)
        got = tweedie_denoise(prior, np.array([y]), s2)[0]
        worst = max(worst, abs(got - ref) / abs(ref))
    return worst


def beam_squint_peaks(n=64, theta0_deg=30.0, frac_bw=0.2, count=5, grid=200001):
    """Per-subcarrier grid-search peak of a conjugate beamformer frozen at f_c."""
    g = build_aosa(1e-3, 5e-4, 1, (1, 1), (n, 1))
    fc = g.carrier_frequency_hz
    theta0 = np.deg2rad(theta0_deg)
    w = array_response(g, FarSource(theta0))
    thetas = np.linspace(0.0, np.pi / 2 * 0.99, grid)
    x = g.element_positions_m[:, 0]
    out = []
    for f in subcarrier_frequencies(fc, frac_bw * fc, count):
        A = np.exp(1j * 2 * np.pi * f / SPEED_OF_LIGHT * np.outer(np.sin(thetas), x - x.mean()))
        gain = np.abs(A @ w.conj())
        out.append((f, thetas[np.argmax(gain)]))
    return fc, theta0, thetas[1] - thetas[0], out


def direct_search_sum_rate(H, P, s2, rng, starts=100):
    """Best sum rate over L-BFGS runs on a unit-Frobenius precoder scaled to full power."""
    N, K = H.shape

    def neg_rate(x):
        V = (x[:N * K] + 1j * x[N * K:]).reshape(N, K)
        return -sum_rate(H, V / np.linalg.norm(V) * np.sqrt(P), s2)

    return max(-minimize(neg_rate, rng.standard_normal(2 * N * K), method="L-BFGS-B").fun for _ in range(starts))


MASK64 = (1 << 64) - 1


def philox4x64_10(counter, key):
    """Reference Philox4x64 with 10 rounds on 4 counter words and 2 key words."""
    c, k = list(counter), list(key)
    for _ in range(10):
        p0 = 0xD2E7470EE14C6C93 * c[0]
        p1 = 0xCA5A826395121157 * c[2]
        c = [(p1 >> 64) ^ c[1] ^ k[0], p1 & MASK64, (p0 >> 64) ^ c[3] ^ k[1], p0 & MASK64]
        k = [(k[0] + 0x9E3779B97F4A7C15) & MASK64, (k[1] + 0xBB67AE8584CAA73B) & MASK64]
    return c
