"""Hybrid far-/near-field sparse multipath channels over an AoSA.

Every response is phase-only (unit modulus) unless ``amplitude_taper`` is set.
Far-field sources are given by angles, near-field sources by position; the
reference point for spherical wavefront phases is the array centroid.
"""
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_generator, check_count, check_positive, crandn
from .exceptions import InvalidParameterError
from .geometry import SPEED_OF_LIGHT, rayleigh_distance


def direction(azimuth, elevation):
    """Unit vector from the array towards a source at (azimuth, elevation).

    Broadside (both zero) is ``+z``; azimuth rotates towards ``+x`` and
    elevation towards ``+y``.
    """
    ce = np.cos(elevation)
    return np.array([ce * np.sin(azimuth), np.sin(elevation), ce * np.cos(azimuth)])


@dataclass(frozen=True)
class FarSource:
    azimuth_rad: float
    elevation_rad: float = 0.0


@dataclass(frozen=True)
class NearSource:
    position_m: tuple

    @classmethod
    def at(cls, distance, azimuth=0.0, elevation=0.0, center=None):
        c = np.zeros(3) if center is None else np.asarray(center, float)
        return cls(tuple(c + distance * direction(azimuth, elevation)))


@dataclass(frozen=True)
class PathComponent:
    complex_gain: complex
    field_kind: str  # "far" or "near"
    azimuth_rad: float
    elevation_rad: float
    source_position_m: tuple = None
    visibility: np.ndarray = field(default=None, repr=False)

    @property
    def source(self):
        if self.field_kind == "near":
            return NearSource(self.source_position_m)
        return FarSource(self.azimuth_rad, self.elevation_rad)


@dataclass(frozen=True)
class Scenario:
    """Multipath scenario.

    ``near_fraction=None`` draws every distance from the whole range; a number
    in ``[0, 1]`` instead sends each path to the near region (below the Rayleigh
    distance) with that probability. Classification is always by distance.
    """

    num_paths: int = 5
    k_factor_db: float = 10.0
    near_fraction: float = None
    distance_range_m: tuple = (1.0, 100.0)
    user_distance_m: float = None
    visibility_prob: float = 1.0
    azimuth_range_rad: tuple = (-np.pi / 2, np.pi / 2)
    elevation_range_rad: tuple = (-np.pi / 4, np.pi / 4)


@dataclass(frozen=True)
class ChannelRealization:
    """``channels`` has shape ``(n_subcarriers, N)`` or ``(n_subcarriers, N, K)``."""

    subcarrier_frequencies_hz: np.ndarray
    channels: np.ndarray = field(repr=False)
    paths: tuple = field(repr=False)
    geometry_ref: str = ""

    def __getitem__(self, k):
        return self.channels[k]


def array_response(geometry, source, wavelength=None, amplitude_taper=False):
    """Steering vector of ``geometry`` towards ``source`` at ``wavelength``."""
    lam = geometry.carrier_wavelength_m if wavelength is None else check_positive(wavelength, "wavelength")
    pos = geometry.element_positions_m
    k0 = 2.0 * np.pi / lam
    if isinstance(source, FarSource):
        # propagation direction is -u, so the phase is +k0 <u, p>
        u = direction(source.azimuth_rad, source.elevation_rad)
        return np.exp(1j * k0 * ((pos - geometry.centroid) @ u))
    if isinstance(source, NearSource):
        q = np.asarray(source.position_m, dtype=float)
        dist = np.linalg.norm(q[None, :] - pos, axis=1)
        if np.any(dist <= 1e-12 * max(lam, 1.0)):
            raise InvalidParameterError("near-field source coincides with an array element")
        ref = np.linalg.norm(q - geometry.centroid)
        resp = np.exp(-1j * k0 * (dist - ref))
        if amplitude_taper:
            resp = resp * (ref / dist)
        return resp
    raise InvalidParameterError(f"unsupported source {source!r}")


def _draw_visibility(geometry, prob, rng):
    if prob >= 1.0:
        return np.ones(geometry.n_subarrays, dtype=bool)
    mask = rng.random(geometry.n_subarrays) < prob
    if not mask.any():
        mask[rng.integers(geometry.n_subarrays)] = True
    return mask


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def sample_paths(geometry, scenario, rng=None):
    """Draw one user's multipath components.

    The first path is line-of-sight with power ``K / (K + 1)`` and zero phase;
    the remaining ``L - 1`` carry i.i.d. CN(0, 1 / ((K + 1)(L - 1))) gains. Gains
    are rescaled by ``sqrt(N / visible elements)`` so that the expected squared
    channel norm is ``N``.
    """
    rng = as_generator(rng)
    L = check_count(scenario.num_paths, "num_paths")
    lo, hi = scenario.distance_range_m
    if not (lo > 0 and hi > lo):
        raise InvalidParameterError(f"distance_range_m must be positive and increasing, got {(lo, hi)}")
    r_ray = rayleigh_distance(geometry)
    kf = 10.0 ** (scenario.k_factor_db / 10.0)
    n = geometry.n_elements

    def draw_distance():
        a, b = lo, hi
        if scenario.near_fraction is not None:
            if rng.random() < scenario.near_fraction:
                a, b = lo, min(hi, r_ray)
            else:
                a, b = max(lo, r_ray), hi
            if not b > a:
                a, b = lo, hi
        return _log_uniform(rng, a, b)

    paths = []
    for l in range(L):
        az = rng.uniform(*scenario.azimuth_range_rad)
        el = rng.uniform(*scenario.elevation_range_rad)
        if l == 0:
            d = scenario.user_distance_m if scenario.user_distance_m is not None else draw_distance()
            gain = complex(np.sqrt(kf / (kf + 1.0))) if L > 1 else 1.0 + 0j
            vis = np.ones(geometry.n_subarrays, dtype=bool)
        else:
            d = draw_distance()
            gain = complex(crandn(rng, 1, 1.0 / ((kf + 1.0) * (L - 1)))[0])
            vis = _draw_visibility(geometry, scenario.visibility_prob, rng)
        visible = np.count_nonzero(vis[geometry.sa_index_of_element])
        gain *= np.sqrt(n / visible)
        if d < r_ray:
            pos = tuple(geometry.centroid + d * direction(az, el))
            paths.append(PathComponent(gain, "near", az, el, pos, vis))
        else:
            paths.append(PathComponent(gain, "far", az, el, None, vis))
    return paths


def subcarrier_frequencies(fc, bandwidth=0.0, count=1):
    """Centred uniform subcarrier grid; a single subcarrier sits at ``fc``."""
    count = check_count(count, "count")
    fc = check_positive(fc, "fc")
    if count == 1:
        return np.array([fc])
    bandwidth = check_positive(bandwidth, "bandwidth")
    if not fc > bandwidth / 2:
        raise InvalidParameterError("fc must exceed half the bandwidth")
    return fc + bandwidth / count * (np.arange(count) - (count - 1) / 2.0)


def assemble_channel(geometry, paths, fc=None, bandwidth=0.0, count=1, absorption=None,
                     amplitude_taper=False):
    """Sum the gain-weighted, visibility-masked path responses per subcarrier.

    ``absorption`` is an optional per-subcarrier amplitude multiplier table.
    """
    fc = geometry.carrier_frequency_hz if fc is None else fc
    freqs = subcarrier_frequencies(fc, bandwidth, count)
    absorption = np.ones(freqs.size) if absorption is None else np.asarray(absorption, float)
    if absorption.shape != freqs.shape:
        raise InvalidParameterError("absorption table needs one entry per subcarrier")
    h = np.zeros((freqs.size, geometry.n_elements), dtype=np.complex128)
    for p in paths:
        mask = np.ones(geometry.n_elements, bool) if p.visibility is None else p.visibility[geometry.sa_index_of_element]
        for k, f in enumerate(freqs):
            h[k] += p.complex_gain * mask * array_response(geometry, p.source, SPEED_OF_LIGHT / f, amplitude_taper)
    h *= absorption[:, None]
    return ChannelRealization(freqs, h, tuple(paths), geometry.identifier())


def multiuser_channel(geometry, scenario, n_users, rng=None, **kwargs):
    """Stack ``n_users`` independent users as columns: channels shape ``(n_sub, N, K)``."""
    rng = as_generator(rng)
    cols, paths = [], []
    for _ in range(check_count(n_users, "n_users")):
        p = sample_paths(geometry, scenario, rng)
        cols.append(assemble_channel(geometry, p, **kwargs))
        paths.append(tuple(p))
    h = np.stack([c.channels for c in cols], axis=-1)
    return ChannelRealization(cols[0].subcarrier_frequencies_hz, h, tuple(paths), geometry.identifier())
