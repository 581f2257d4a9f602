"""Planar-array steering vectors, their angle derivatives, and beamspace dictionaries.

Conventions used throughout the package:

* elements sit on a uniform planar array (UPA) with half-wavelength spacing at
  the design carrier ``f_c``; element (i_h, i_v) flattens row-major to
  ``i_h * n_v + i_v`` (horizontal index outer, vertical inner);
* ``theta`` is the elevation angle measured from the array zenith, ``phi`` the
  azimuth, both in radians; the horizontal phase gradient follows
  sin(phi)sin(theta) and the vertical one cos(theta);
* steering vectors carry the frequency-proportional phase slope that makes
  wideband beams squint away from their carrier-frequency pointing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

SPEED_OF_LIGHT = 299_792_458.0  # m/s

__all__ = [
    "SPEED_OF_LIGHT",
    "Direction",
    "ArrayGeometry",
    "BeamspaceDictionary",
    "steering_vector",
    "steering_vectors",
    "steering_derivatives",
    "dirichlet",
    "beamspace_dictionary",
]


@dataclass(frozen=True)
class Direction:
    """Propagation direction: elevation ``theta`` and azimuth ``phi`` in radians."""

    theta: float
    phi: float

    @property
    def cos_pair(self) -> tuple[float, float]:
        """Directional cosines (horizontal, vertical) the array actually resolves."""
        return (
            float(np.sin(self.phi) * np.sin(self.theta)),
            float(np.cos(self.theta)),
        )


@dataclass(frozen=True)
class ArrayGeometry:
    """UPA layout: element counts per axis, delay-subarray counts, design carrier.

    Parameters
    ----------
    n_h, n_v : int
        Antenna elements along the horizontal / vertical axis.
    q_h, q_v : int, optional
        Delay taps (subarrays) per axis; must divide the element counts.
        Defaults to one tap per element (full delay resolution); pass
        smaller counts to share taps across element blocks.
    f_c : float
        Carrier the half-wavelength spacing is designed for, in Hz.
    """

    n_h: int
    n_v: int
    q_h: int | None = None
    q_v: int | None = None
    f_c: float = 100e9

    def __post_init__(self):
        if self.q_h is None:
            object.__setattr__(self, "q_h", self.n_h)
        if self.q_v is None:
            object.__setattr__(self, "q_v", self.n_v)
        for name in ("n_h", "n_v", "q_h", "q_v"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.n_h % self.q_h:
            raise ConfigurationError(
                f"q_h={self.q_h} does not divide the element count n_h={self.n_h}"
            )
        if self.n_v % self.q_v:
            raise ConfigurationError(
                f"q_v={self.q_v} does not divide the element count n_v={self.n_v}"
            )
        if self.f_c <= 0:
            raise ConfigurationError("f_c must be positive")

    @property
    def n_elements(self) -> int:
        return self.n_h * self.n_v

    @property
    def n_subarrays(self) -> int:
        return self.q_h * self.q_v

    @property
    def elements_per_subarray(self) -> tuple[int, int]:
        """(l_h, l_v): elements sharing one delay tap along each axis."""
        return self.n_h // self.q_h, self.n_v // self.q_v

    def element_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-element (i_h, i_v) integer grids in the canonical flat order."""
        i_h, i_v = np.meshgrid(
            np.arange(self.n_h), np.arange(self.n_v), indexing="ij"
        )
        return i_h.ravel(), i_v.ravel()


def _axis_vector(n: int, slope: float) -> np.ndarray:
    # unit-norm phase ramp exp(j*pi*slope*i) / sqrt(n), i = 0..n-1
    return np.exp(1j * np.pi * slope * np.arange(n)) / np.sqrt(n)


def steering_vector(direction: Direction, freq: float, geom: ArrayGeometry) -> np.ndarray:
    """Unit-norm UPA steering vector at ``freq`` toward ``direction``.

    The outer (Kronecker) product of the horizontal and vertical axis ramps;
    phase slopes scale with ``freq / f_c`` so the same physical aperture is
    described at every subcarrier.
    """
    u, w = direction.cos_pair
    ratio = freq / geom.f_c
    return np.kron(
        _axis_vector(geom.n_h, ratio * u), _axis_vector(geom.n_v, ratio * w)
    )


def steering_vectors(
    direction: Direction, freqs: np.ndarray, geom: ArrayGeometry
) -> np.ndarray:
    """Stack of steering vectors, shape (len(freqs), n_elements)."""
    freqs = np.asarray(freqs, dtype=float)
    u, w = direction.cos_pair
    i_h, i_v = geom.element_indices()
    slope = i_h * u + i_v * w  # (n_elements,)
    phase = np.pi * np.outer(freqs / geom.f_c, slope)
    return np.exp(1j * phase) / np.sqrt(geom.n_elements)


def steering_derivatives(
    direction: Direction, freq: float, geom: ArrayGeometry
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Steering vector and its partial derivatives w.r.t. (theta, phi).

    Returns
    -------
    (a, da_dtheta, da_dphi)
        Each of shape (n_elements,). Every entry of the steering vector is a
        pure phasor, so each derivative is the vector times an imaginary,
        element-dependent factor.
    """
    a = steering_vector(direction, freq, geom)
    i_h, i_v = geom.element_indices()
    scale = 1j * np.pi * freq / geom.f_c
    sin_t, cos_t = np.sin(direction.theta), np.cos(direction.theta)
    sin_p, cos_p = np.sin(direction.phi), np.cos(direction.phi)
    d_theta = a * (scale * (sin_p * cos_t * i_h - sin_t * i_v))
    d_phi = a * (scale * (cos_p * sin_t * i_h))
    return a, d_theta, d_phi


def dirichlet(x, n: int):
    """Periodic sinc sin(n*pi*x/2) / sin(pi*x/2), with the removable poles filled.

    At x in 2Z both numerator and denominator vanish; the limit
    n*cos(n*pi*x/2)/cos(pi*x/2) is substituted there (magnitude ``n``). Accepts
    scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    half = 0.5 * np.pi * x
    den = np.sin(half)
    near_pole = np.abs(den) < 1e-12
    safe_den = np.where(near_pole, 1.0, den)
    ratio = np.sin(n * half) / safe_den
    limit = n * np.cos(n * half) / np.cos(half)
    out = np.where(near_pole, limit, ratio)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BeamspaceDictionary:
    """Angular dictionary: unit-norm carrier-frequency steering codewords.

    ``codewords`` has shape (n_elements, n_d) with the column for cosine pair
    (u_i, v_j) at flat index ``i * len(v_grid) + j``. When the per-axis grid
    sizes equal the element counts the codewords form an orthonormal basis.
    """

    codewords: np.ndarray
    u_grid: np.ndarray = field(repr=False)
    v_grid: np.ndarray = field(repr=False)

    @property
    def n_d(self) -> int:
        return self.codewords.shape[1]

    def flat_index(self, i: int, j: int) -> int:
        return i * len(self.v_grid) + j


def beamspace_dictionary(
    geom: ArrayGeometry, n_dh: int, n_dv: int
) -> BeamspaceDictionary:
    """Dictionary over an (n_dh, n_dv) grid of directional cosines in [-1, 1).

    Columns are Kronecker products of per-axis half-wavelength ramps sampled
    at the carrier, i.e. the DFT-style codebook the beamspace transforms use.
    """
    if n_dh < 1 or n_dv < 1:
        raise ConfigurationError("dictionary grid sizes must be positive")
    u_grid = -1.0 + 2.0 * np.arange(n_dh) / n_dh
    v_grid = -1.0 + 2.0 * np.arange(n_dv) / n_dv
    d_h = np.exp(1j * np.pi * np.outer(np.arange(geom.n_h), u_grid)) / np.sqrt(geom.n_h)
    d_v = np.exp(1j * np.pi * np.outer(np.arange(geom.n_v), v_grid)) / np.sqrt(geom.n_v)
    return BeamspaceDictionary(codewords=np.kron(d_h, d_v), u_grid=u_grid, v_grid=v_grid)
