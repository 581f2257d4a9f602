"""Wideband channel synthesis and beamspace similarity measures.

Communication links are one line-of-sight ray plus a damped bundle of
scattered rays per user; sensing is a monostatic echo through every target.
All frequency dependence (path gain, phase, steering squint) is kept per
subcarrier, which is what the squint-control machinery downstream relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    BeamspaceDictionary,
    Direction,
    steering_vectors,
)
from .errors import ConfigurationError
from .scene import Scene, world_to_polar

KL_EPSILON = 1e-9

__all__ = [
    "KL_EPSILON",
    "SubcarrierGrid",
    "PathSpec",
    "UserChannelSpec",
    "CommChannel",
    "TargetSpec",
    "TargetResponse",
    "BeamspaceProfile",
    "comm_channel",
    "target_response",
    "downlink_rx",
    "echo_rx",
    "beamspace_channels",
    "cs_correlation",
    "peak_similarity",
    "channel_specs_from_scene",
]


@dataclass(frozen=True)
class SubcarrierGrid:
    """OFDM grid: carrier ``f_c``, total bandwidth, subcarrier count."""

    f_c: float
    bandwidth: float
    m_count: int

    def __post_init__(self):
        if self.m_count < 1:
            raise ConfigurationError("m_count must be positive")
        if self.bandwidth < 0 or self.f_c <= 0:
            raise ConfigurationError("f_c must be positive and bandwidth non-negative")
        if self.bandwidth >= 2 * self.f_c:
            raise ConfigurationError("bandwidth must leave all subcarriers positive")

    @property
    def frequencies(self) -> np.ndarray:
        m = np.arange(1, self.m_count + 1)
        return self.f_c + (self.bandwidth / self.m_count) * (m - (self.m_count + 1) / 2)

    @property
    def f_lo(self) -> float:
        return float(self.frequencies[0])

    @property
    def f_hi(self) -> float:
        return float(self.frequencies[-1])

    @property
    def span(self) -> float:
        """Spacing between the outermost subcarriers, B*(M-1)/M."""
        return self.f_hi - self.f_lo

    @property
    def subcarrier_bw(self) -> float:
        return self.bandwidth / self.m_count


@dataclass(frozen=True)
class PathSpec:
    """One propagation path: arrival/departure direction and path length in metres."""

    direction: Direction
    distance: float


@dataclass(frozen=True)
class UserChannelSpec:
    los: PathSpec
    nlos: tuple[PathSpec, ...] = ()


@dataclass(frozen=True)
class TargetSpec:
    direction: Direction
    distance: float
    rcs: float = 1.0


def _path_gain(freqs: np.ndarray, distance: float) -> np.ndarray:
    return SPEED_OF_LIGHT / (4.0 * np.pi * freqs * distance)


@dataclass(frozen=True)
class CommChannel:
    """Per-user downlink vectors, shape (n_users, m_count, n_elements)."""

    vectors: np.ndarray
    specs: tuple[UserChannelSpec, ...]
    grid: SubcarrierGrid
    k_f: float

    @property
    def n_users(self) -> int:
        return self.vectors.shape[0]

    def user_directions(self) -> tuple[Direction, ...]:
        return tuple(s.los.direction for s in self.specs)


def comm_channel(
    users: list[UserChannelSpec] | tuple[UserChannelSpec, ...],
    grid: SubcarrierGrid,
    geom: ArrayGeometry,
    k_f: float = 4.0,
    rng: np.random.Generator | int | None = None,
) -> CommChannel:
    """Synthesize downlink channels: LoS ray plus a scaled sum of scattered rays.

    Every path carries the free-space gain c/(4*pi*f*d), the propagation phase
    exp(-j*2*pi*f*d/c), and one random initial phase drawn uniformly per path
    and held fixed across subcarriers. The scattered sum is divided by
    sqrt(P_u) * k_f, with P_u the number of scattered paths for that user.
    """
    rng = np.random.default_rng(rng)
    freqs = grid.frequencies
    out = np.zeros((len(users), grid.m_count, geom.n_elements), dtype=complex)

    def ray(path: PathSpec) -> np.ndarray:
        phase0 = rng.uniform(0.0, 2.0 * np.pi)
        gain = _path_gain(freqs, path.distance) * np.exp(
            1j * (phase0 - 2.0 * np.pi * freqs * path.distance / SPEED_OF_LIGHT)
        )
        return gain[:, None] * steering_vectors(path.direction, freqs, geom)

    for u, spec in enumerate(users):
        out[u] = ray(spec.los)
        if spec.nlos:
            scale = 1.0 / (np.sqrt(len(spec.nlos)) * k_f)
            out[u] += scale * sum(ray(p) for p in spec.nlos)
    return CommChannel(vectors=out, specs=tuple(users), grid=grid, k_f=k_f)


@dataclass(frozen=True)
class TargetResponse:
    """Monostatic sensing response factored as A_r @ diag(alpha) @ A_t^H per subcarrier.

    ``tx_steering``/``rx_steering`` have shape (m_count, n_elements, n_targets);
    ``alphas`` is (m_count, n_targets).
    """

    tx_steering: np.ndarray
    rx_steering: np.ndarray
    alphas: np.ndarray
    specs: tuple[TargetSpec, ...]
    grid: SubcarrierGrid
    tx_geom: ArrayGeometry
    rx_geom: ArrayGeometry

    @property
    def n_targets(self) -> int:
        return len(self.specs)

    def directions(self) -> tuple[Direction, ...]:
        return tuple(s.direction for s in self.specs)

    def matrix(self, m: int) -> np.ndarray:
        """Dense (n_rx, n_tx) response at subcarrier index ``m`` (0-based)."""
        return (self.rx_steering[m] * self.alphas[m][None, :]) @ self.tx_steering[
            m
        ].conj().T

    def matrices(self) -> np.ndarray:
        return np.stack([self.matrix(m) for m in range(self.grid.m_count)])


def target_response(
    targets: list[TargetSpec] | tuple[TargetSpec, ...],
    grid: SubcarrierGrid,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    rng: np.random.Generator | int | None = None,
) -> TargetResponse:
    """Echo response through each target with radar-equation amplitude scaling.

    |alpha| = sqrt(c^2 * rcs / ((4*pi)^3 * f^2 * d^4)); each target gets one
    uniform random phase, fixed across subcarriers.
    """
    rng = np.random.default_rng(rng)
    freqs = grid.frequencies
    m_count, k = grid.m_count, len(targets)
    a_t = np.zeros((m_count, tx_geom.n_elements, k), dtype=complex)
    a_r = np.zeros((m_count, rx_geom.n_elements, k), dtype=complex)
    alphas = np.zeros((m_count, k), dtype=complex)
    for j, tgt in enumerate(targets):
        a_t[:, :, j] = steering_vectors(tgt.direction, freqs, tx_geom)
        a_r[:, :, j] = steering_vectors(tgt.direction, freqs, rx_geom)
        phase0 = rng.uniform(0.0, 2.0 * np.pi)
        mag = np.sqrt(
            SPEED_OF_LIGHT**2 * tgt.rcs / ((4.0 * np.pi) ** 3 * freqs**2 * tgt.distance**4)
        )
        alphas[:, j] = mag * np.exp(1j * phase0)
    return TargetResponse(
        tx_steering=a_t,
        rx_steering=a_r,
        alphas=alphas,
        specs=tuple(targets),
        grid=grid,
        tx_geom=tx_geom,
        rx_geom=rx_geom,
    )


def _noise(shape, noise_psd: float, subcarrier_bw: float, rng) -> np.ndarray:
    sigma2 = noise_psd * subcarrier_bw
    return np.sqrt(sigma2 / 2.0) * (
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    )


def downlink_rx(
    h: np.ndarray,
    x: np.ndarray,
    noise_psd: float = 0.0,
    subcarrier_bw: float = 1.0,
    rng: np.random.Generator | int | None = None,
) -> complex:
    """Scalar receive sample y = h^H x + z with circular Gaussian noise."""
    y = complex(np.vdot(h, x))
    if noise_psd > 0:
        y += complex(_noise((), noise_psd, subcarrier_bw, np.random.default_rng(rng)))
    return y


def echo_rx(
    g: np.ndarray,
    x: np.ndarray,
    noise_psd: float = 0.0,
    subcarrier_bw: float = 1.0,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Echo vector y = G x + z at the sensing receiver."""
    y = g @ x
    if noise_psd > 0:
        y = y + _noise(y.shape, noise_psd, subcarrier_bw, np.random.default_rng(rng))
    return y


@dataclass(frozen=True)
class BeamspaceProfile:
    """Aggregated angular-power profiles of both channels plus their peak indices.

    ``comm``/``sens`` are L1-normalized over the shared dictionary size;
    ``comm_peaks`` is (m_count,), ``sens_peaks`` (m_count, n_targets).
    """

    comm: np.ndarray
    sens: np.ndarray
    comm_raw: np.ndarray = field(repr=False)
    sens_raw: np.ndarray = field(repr=False)
    comm_peaks: np.ndarray = field(repr=False)
    sens_peaks: np.ndarray = field(repr=False)


def beamspace_channels(
    comm: CommChannel,
    tgt: TargetResponse,
    dict_tx: BeamspaceDictionary,
    dict_rx: BeamspaceDictionary,
    ttd_phases: np.ndarray | None = None,
) -> BeamspaceProfile:
    """Project both channels onto the angular dictionaries and aggregate over frequency.

    The communication side sums users before projecting; the sensing side takes
    the diagonal of D_r^H G_m D_t, which needs both dictionaries to share one
    size. ``ttd_phases`` (m_count, n_tx) optionally applies a delay-network
    modulation to the transmit side of both channels before projecting.
    """
    if dict_tx.n_d != dict_rx.n_d:
        raise ConfigurationError(
            f"beamspace diagonal needs equal dictionary sizes, got "
            f"{dict_tx.n_d} and {dict_rx.n_d}"
        )
    m_count = comm.grid.m_count
    n_d = dict_tx.n_d
    sens_raw = np.zeros((m_count, n_d), dtype=complex)
    sens_peaks = np.zeros((m_count, tgt.n_targets), dtype=int)
    summed = comm.vectors.sum(axis=0)  # (m, n_tx)
    if ttd_phases is not None:
        summed = summed * np.conj(ttd_phases)
    comm_raw = summed @ dict_tx.codewords.conj()
    for m in range(m_count):
        mod = np.ones(tgt.tx_geom.n_elements) if ttd_phases is None else ttd_phases[m]
        per_target = np.zeros((tgt.n_targets, n_d), dtype=complex)
        for k in range(tgt.n_targets):
            rx_part = dict_rx.codewords.conj().T @ tgt.rx_steering[m, :, k]
            tx_part = dict_tx.codewords.T @ (np.conj(tgt.tx_steering[m, :, k]) * mod)
            per_target[k] = tgt.alphas[m, k] * rx_part * tx_part
            sens_peaks[m, k] = int(np.argmax(np.abs(per_target[k])))
        sens_raw[m] = per_target.sum(axis=0)
    comm_abs = np.abs(comm_raw).sum(axis=0)
    sens_abs = np.abs(sens_raw).sum(axis=0)
    comm_profile = comm_abs / max(comm_abs.sum(), 1e-300)
    sens_profile = sens_abs / max(sens_abs.sum(), 1e-300)
    return BeamspaceProfile(
        comm=comm_profile,
        sens=sens_profile,
        comm_raw=comm_raw,
        sens_raw=sens_raw,
        comm_peaks=np.argmax(np.abs(comm_raw), axis=1),
        sens_peaks=sens_peaks,
    )


def _smoothed_kl(p: np.ndarray, q: np.ndarray, eps: float) -> float:
    n = len(p)
    ps = (1.0 - eps) * p + eps / n
    qs = (1.0 - eps) * q + eps / n
    return float(np.sum(ps * np.log(ps / qs)))


def cs_correlation(
    comm: CommChannel,
    tgt: TargetResponse,
    dict_tx: BeamspaceDictionary,
    dict_rx: BeamspaceDictionary,
    ttd_phases: np.ndarray | None = None,
) -> tuple[float, BeamspaceProfile]:
    """Channel similarity as inverse KL divergence of the beamspace profiles.

    Both profiles are mixed with uniform mass KL_EPSILON before the divergence
    so disjoint supports stay finite; the result is capped at 1/KL_EPSILON.
    """
    profile = beamspace_channels(comm, tgt, dict_tx, dict_rx, ttd_phases)
    kl = _smoothed_kl(profile.comm, profile.sens, KL_EPSILON)
    return 1.0 / max(kl, KL_EPSILON), profile


def peak_similarity(profile: BeamspaceProfile) -> int:
    """Count of (subcarrier, target) pairs whose sensing peak hits the comm peak."""
    return int(np.sum(profile.sens_peaks == profile.comm_peaks[:, None]))


def channel_specs_from_scene(
    scene: Scene,
    n_scatterers: int = 4,
    scatter_half_width: float = 20.0,
    rcs: float = 1.0,
    rng: np.random.Generator | int | None = None,
) -> tuple[list[UserChannelSpec], list[TargetSpec]]:
    """Convert scene entities into channel path specs.

    Users get ``n_scatterers`` single-bounce scatterers drawn uniformly from a
    box of the given half-width around the user, kept above ground; a scattered
    path's length is UPA->scatterer->user and its direction the scatterer
    bearing. Targets map directly with the given radar cross-section.
    """
    rng = np.random.default_rng(rng)
    upa = scene.upa_position
    users = []
    for ent in scene.by_kind("user"):
        los_dir, los_dist = world_to_polar(ent.position, upa)
        nlos = []
        for _ in range(n_scatterers):
            offset = rng.uniform(-scatter_half_width, scatter_half_width, 3)
            point = ent.position + offset
            point[2] = max(point[2], 0.1)
            s_dir, s_dist = world_to_polar(point, upa)
            bounce = float(np.linalg.norm(point - ent.position))
            nlos.append(PathSpec(direction=s_dir, distance=s_dist + bounce))
        users.append(UserChannelSpec(los=PathSpec(los_dir, los_dist), nlos=tuple(nlos)))
    targets = [
        TargetSpec(direction=world_to_polar(e.position, upa)[0],
                   distance=world_to_polar(e.position, upa)[1],
                   rcs=rcs)
        for e in scene.by_kind("target")
    ]
    return users, targets
