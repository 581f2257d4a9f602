"""Link-quality and estimation-quality scores shared by the optimizer and demos.

Spectral efficiency with inter-user interference, the angle Fisher
information / CRB pair for the echo model, a scenario-batch training loss,
and frame-level time-averaged efficiency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .arrays import steering_derivatives
from .channels import TargetResponse
from .errors import ConfigurationError

__all__ = [
    "NoiseConfig",
    "FisherInfo",
    "FrameTiming",
    "LossSample",
    "spectral_efficiency",
    "fisher_information",
    "crb",
    "isac_loss",
    "isac_efficiency",
]


@dataclass(frozen=True)
class NoiseConfig:
    """Noise spectral densities (W/Hz) and the per-subcarrier bandwidth (Hz)."""

    n_c0: float
    n_s0: float
    subcarrier_bw: float

    def __post_init__(self):
        for name in ("n_c0", "n_s0", "subcarrier_bw"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def comm_variance(self) -> float:
        return self.n_c0 * self.subcarrier_bw

    @property
    def sensing_variance(self) -> float:
        return self.n_s0 * self.subcarrier_bw


@dataclass(frozen=True)
class FisherInfo:
    """Angle-parameter information: elevation block first, then azimuth."""

    matrix: np.ndarray
    per_subcarrier: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigurationError("information matrix must be square")
        if not np.allclose(m, m.T, atol=1e-10 * max(1.0, abs(np.trace(m)))):
            raise ConfigurationError("information matrix must be symmetric")
        floor = -1e-10 * max(1.0, abs(np.trace(m)))
        if np.linalg.eigvalsh(m).min() < floor:
            raise ConfigurationError("information matrix must be PSD")

    @property
    def n_params(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class FrameTiming:
    """Stage durations of one transmission frame."""

    t_rs: float
    t_data: float
    n_sub: int
    t_ssb: float = 0.0
    variant: str = "vision-aided"

    def __post_init__(self):
        if min(self.t_rs, self.t_data, self.t_ssb) < 0:
            raise ConfigurationError("stage durations must be non-negative")
        if self.n_sub < 1:
            raise ConfigurationError("n_sub must be at least 1")
        if self.variant not in ("rf-only", "vision-aided"):
            raise ConfigurationError(f"unknown frame variant {self.variant!r}")

    @property
    def t_frame(self) -> float:
        base = self.n_sub * (self.t_rs + self.t_data)
        # only the rf-only variant spends synchronization time up front
        return base + self.t_ssb if self.variant == "rf-only" else base


class LossSample(NamedTuple):
    """Per-scenario metric bundle consumed by the batch loss."""

    cor: float
    cor_star: float
    crb: float
    crb_min: float
    se: float


def spectral_efficiency(
    channels, precoders: np.ndarray, noise: NoiseConfig
) -> tuple[float, np.ndarray]:
    """Sum rate and the (user, subcarrier) rate table in bits/s.

    ``channels`` is either a CommChannel or the raw (n_users, M, n_t) array;
    ``precoders`` has shape (M, n_t, n_streams) with column u serving user u.
    """
    h = np.asarray(getattr(channels, "vectors", channels))
    f = np.asarray(precoders)
    n_users, m_count, _ = h.shape
    if f.shape[0] != m_count or f.shape[2] < n_users:
        raise ConfigurationError(
            f"precoder stack {f.shape} does not cover {n_users} users on "
            f"{m_count} subcarriers"
        )
    # rx[u, m, i] = h_{u,m}^H f_{m,i}
    rx = np.abs(np.einsum("ume,mei->umi", h.conj(), f)) ** 2
    signal = rx[np.arange(n_users), :, np.arange(n_users)]
    interference = rx[:, :, :n_users].sum(axis=2) - signal
    sinr = signal / (interference + noise.comm_variance)
    per_user = noise.subcarrier_bw * np.log2(1.0 + sinr)
    return float(per_user.sum()), per_user


def fisher_information(
    targets: TargetResponse, r_x: np.ndarray, noise: NoiseConfig
) -> FisherInfo:
    """Angle information of the echo under Gaussian noise.

    ``r_x`` holds the transmit covariance per subcarrier, shape
    (M, n_t, n_t). Blocks follow the four-term product rule of the echo
    mean's derivatives; distances and reflection coefficients are treated
    as known constants.
    """
    grid = targets.grid
    m_count, k = grid.m_count, targets.n_targets
    r_x = np.asarray(r_x)
    if r_x.shape != (m_count, targets.tx_geom.n_elements, targets.tx_geom.n_elements):
        raise ConfigurationError(f"r_x has shape {r_x.shape}, expected per-subcarrier covariances")
    bandwidth = noise.subcarrier_bw * m_count
    dirs = targets.directions()
    per_m = np.zeros((m_count, 2 * k, 2 * k))
    for m in range(m_count):
        freq = float(grid.frequencies[m])
        a_t = targets.tx_steering[m]
        a_r = targets.rx_steering[m]
        dt_th = np.zeros_like(a_t)
        dt_ph = np.zeros_like(a_t)
        dr_th = np.zeros_like(a_r)
        dr_ph = np.zeros_like(a_r)
        for j, d in enumerate(dirs):
            _, dt_th[:, j], dt_ph[:, j] = steering_derivatives(d, freq, targets.tx_geom)
            _, dr_th[:, j], dr_ph[:, j] = steering_derivatives(d, freq, targets.rx_geom)
        s = targets.alphas[m]
        w = np.conj(s)[:, None] * s[None, :]
        r = r_x[m]

        def t_fac(left: np.ndarray, right: np.ndarray) -> np.ndarray:
            # transmit side of the echo is conjugated, so the whole
            # quadratic form flips to its conjugate here
            return w * np.conj(left.conj().T @ r @ right)

        def blk(dr_a: np.ndarray, dt_a: np.ndarray,
                dr_b: np.ndarray, dt_b: np.ndarray) -> np.ndarray:
            return (
                (dr_a.conj().T @ dr_b) * t_fac(a_t, a_t)
                + (dr_a.conj().T @ a_r) * t_fac(a_t, dt_b)
                + (a_r.conj().T @ dr_b) * t_fac(dt_a, a_t)
                + (a_r.conj().T @ a_r) * t_fac(dt_a, dt_b)
            )

        j_tt = blk(dr_th, dt_th, dr_th, dt_th)
        j_tp = blk(dr_th, dt_th, dr_ph, dt_ph)
        j_pp = blk(dr_ph, dt_ph, dr_ph, dt_ph)
        full = np.block([[j_tt, j_tp], [j_tp.conj().T, j_pp]])
        per_m[m] = (2.0 / (bandwidth * noise.n_s0)) * np.real(full)
        per_m[m] = 0.5 * (per_m[m] + per_m[m].T)
    total = per_m.sum(axis=0)
    return FisherInfo(matrix=0.5 * (total + total.T), per_subcarrier=per_m)


def crb(fim: FisherInfo) -> float:
    """Trace bound for unbiased angle estimation; +inf when unidentifiable."""
    eigvals = np.linalg.eigvalsh(fim.matrix)
    top = eigvals[-1]
    if top <= 0 or eigvals[0] <= 1e-12 * top:
        return float("inf")
    return float(np.sum(1.0 / eigvals))


def isac_loss(
    samples: Iterable[LossSample] | Sequence[tuple],
    se_floor: float,
    eta_c: float,
) -> float:
    """Batch training loss: correlation-weighted CRB ratio with a rate hinge.

    Each sample scores (cor/cor_star) * (crb_min/crb - eta_c * max(0,
    se_floor - se)); the loss is the negated batch mean, so -1 is the
    optimum when every sample sits at its normalizers with the rate floor
    met.
    """
    batch = [LossSample(*s) for s in samples]
    if not batch:
        raise ConfigurationError("loss batch must not be empty")
    acc = 0.0
    for s in batch:
        if s.crb <= 0 or s.crb_min <= 0:
            raise ConfigurationError("loss requires positive CRB values")
        if s.cor_star <= 0:
            raise ConfigurationError("loss requires a positive correlation normalizer")
        hinge = max(0.0, se_floor - s.se)
        acc += (s.cor / s.cor_star) * (s.crb_min / s.crb - eta_c * hinge)
    return -acc / len(batch)


def isac_efficiency(
    se_star: float, crb_star: float, timing: FrameTiming
) -> tuple[float, float]:
    """Time-averaged (rate, CRB) over one frame.

    Only the data stage carries payload, so the rate scales by the data
    fraction and the bound dilates by its inverse; the shared fraction is
    computed once so the product se * crb survives exactly.
    """
    data_time = timing.t_data * timing.n_sub
    if data_time <= 0:
        raise ConfigurationError("frame has no data time")
    fraction = data_time / timing.t_frame
    return se_star * fraction, crb_star / fraction