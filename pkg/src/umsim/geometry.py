"""Planar array-of-subarrays (AoSA) geometry and the far/near-field boundary."""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from ._validation import check_count, check_positive
from .exceptions import InvalidParameterError

SPEED_OF_LIGHT = 299_792_458.0

#: Subarray spacing conventions. ``pitch``: corresponding elements of adjacent
#: subarrays sit ``w * d_a`` apart. ``gap``: the last element of one subarray and
#: the first element of the next sit ``w * d_a`` apart (``w = 1`` is a uniform array).
SPACING_CONVENTIONS = ("pitch", "gap")


@dataclass(frozen=True)
class ArrayGeometry:
    """Element positions of a planar AoSA lying in ``z = 0``, broadside along ``+z``.

    Elements are ordered row-major over (subarray row, subarray column, element
    row, element column). Grids are given as ``(x, y)`` counts: columns run
    along ``x`` and rows along ``y``.
    """

    carrier_wavelength_m: float
    ae_spacing_m: float
    sa_spacing_factor: float
    sa_grid: tuple
    ae_grid: tuple
    element_positions_m: np.ndarray = field(repr=False)
    sa_index_of_element: np.ndarray = field(repr=False)
    spacing_convention: str = "pitch"

    @property
    def n_elements(self):
        return self.element_positions_m.shape[0]

    @property
    def n_subarrays(self):
        return self.sa_grid[0] * self.sa_grid[1]

    @property
    def carrier_frequency_hz(self):
        return SPEED_OF_LIGHT / self.carrier_wavelength_m

    @property
    def grid_shape(self):
        """``(rows, cols)`` of the virtual uniform element grid."""
        return (self.sa_grid[1] * self.ae_grid[1], self.sa_grid[0] * self.ae_grid[0])

    @property
    def grid_indices(self):
        """Virtual-grid ``(row, col)`` of every element, shape ``(N, 2)``."""
        sx, sy = self.sa_grid
        ax, ay = self.ae_grid
        sr, sc, ar, ac = np.meshgrid(
            np.arange(sy), np.arange(sx), np.arange(ay), np.arange(ax), indexing="ij"
        )
        rows = (sr * ay + ar).ravel()
        cols = (sc * ax + ac).ravel()
        return np.stack([rows, cols], axis=1)

    @property
    def centroid(self):
        return self.element_positions_m.mean(axis=0)

    def identifier(self):
        return (
            f"aosa(lambda={self.carrier_wavelength_m:.6g},d_a={self.ae_spacing_m:.6g},"
            f"w={self.sa_spacing_factor:.6g},sa={self.sa_grid[0]}x{self.sa_grid[1]},"
            f"ae={self.ae_grid[0]}x{self.ae_grid[1]},{self.spacing_convention})"
        )


def _axis_coords(n_sa, n_ae, d_a, w, convention):
    if convention == "pitch":
        pitch = w * d_a
    else:
        pitch = (n_ae - 1) * d_a + w * d_a
    if n_sa > 1 and pitch <= (n_ae - 1) * d_a * (1 + 1e-12):
        raise InvalidParameterError(
            f"subarrays overlap: pitch {pitch:g} m does not clear {n_ae} elements at {d_a:g} m"
        )
    return pitch * np.arange(n_sa), d_a * np.arange(n_ae)


def build_aosa(wavelength, ae_spacing, sa_spacing_factor, sa_grid, ae_grid,
               spacing_convention="pitch", offset=None):
    """Build a planar AoSA centred at the origin (or at ``offset``).

    >>> build_aosa(1e-3, 5e-4, 16, (4, 4), (8, 8)).n_elements
    1024
    """
    wavelength = check_positive(wavelength, "wavelength")
    ae_spacing = check_positive(ae_spacing, "ae_spacing")
    w = check_positive(sa_spacing_factor, "sa_spacing_factor")
    if w < 1:
        raise InvalidParameterError(f"sa_spacing_factor must be >= 1, got {w}")
    if spacing_convention not in SPACING_CONVENTIONS:
        raise InvalidParameterError(f"unknown spacing convention {spacing_convention!r}")
    try:
        sx, sy = (check_count(v, "sa_grid") for v in sa_grid)
        ax, ay = (check_count(v, "ae_grid") for v in ae_grid)
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError("grids must be pairs of positive integers") from exc

    sa_x, ae_x = _axis_coords(sx, ax, ae_spacing, w, spacing_convention)
    sa_y, ae_y = _axis_coords(sy, ay, ae_spacing, w, spacing_convention)

    sr, sc, ar, ac = np.meshgrid(
        np.arange(sy), np.arange(sx), np.arange(ay), np.arange(ax), indexing="ij"
    )
    x = (sa_x[sc] + ae_x[ac]).ravel()
    y = (sa_y[sr] + ae_y[ar]).ravel()
    pos = np.stack([x, y, np.zeros_like(x)], axis=1)
    pos -= pos.mean(axis=0)
    pos[:, 2] = 0.0
    if offset is not None:
        pos = pos + np.asarray(offset, dtype=float).reshape(1, 3)

    sa_index = (sr * sx + sc).ravel()
    return ArrayGeometry(
        carrier_wavelength_m=wavelength,
        ae_spacing_m=ae_spacing,
        sa_spacing_factor=w,
        sa_grid=(sx, sy),
        ae_grid=(ax, ay),
        element_positions_m=pos,
        sa_index_of_element=sa_index,
        spacing_convention=spacing_convention,
    )


def aperture(geometry):
    """Largest distance between any two elements (diagonal aperture)."""
    pos = geometry.element_positions_m
    n = pos.shape[0]
    if n < 2:
        return 0.0
    if n > 4096:
        # the farthest pair always lies on the convex hull
        planar = pos[:, :2]
        try:
            pos = pos[ConvexHull(planar).vertices]
        except Exception:  # collinear points: qhull refuses; extremes of a line suffice
            direction = planar[-1] - planar[0]
            proj = planar @ direction
            pos = pos[[int(np.argmin(proj)), int(np.argmax(proj))]]
    return float(pdist(pos).max())


def rayleigh_distance(geometry):
    """Far/near-field boundary ``2 D^2 / lambda_c`` using the diagonal aperture."""
    return 2.0 * aperture(geometry) ** 2 / geometry.carrier_wavelength_m


def rayleigh_distance_closed_form(geometry):
    """Literature closed form for a square AoSA with half-wavelength element spacing.

    Evaluates ``{n (n - 1) + (n - 1) w}^2 * lambda_c`` where ``n`` is the common
    number of subarrays and elements per axis. It implicitly assumes the ``gap``
    spacing convention and ``d_a = lambda_c / 2``; under the ``pitch`` convention it
    differs from :func:`rayleigh_distance`.
    """
    sx, sy = geometry.sa_grid
    ax, ay = geometry.ae_grid
    if not (sx == sy == ax == ay):
        raise InvalidParameterError("closed form needs equal subarray and element counts per axis")
    n = sx
    w = geometry.sa_spacing_factor
    return (n * (n - 1) + (n - 1) * w) ** 2 * geometry.carrier_wavelength_m
