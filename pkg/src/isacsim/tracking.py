"""Cross-pattern beam tracking that rides the squint instead of scanning.

A wideband analog probe whose pointing slides with frequency covers a whole
angular segment in one slot: every subcarrier looks at a different angle, so
the index of the strongest received subcarrier localizes the user along the
sweep line. One horizontal pass per vertical grid pins the azimuth, then a
single vertical pass at that azimuth pins the elevation, replacing a full
2-D scan with one cross of sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .arrays import ArrayGeometry, Direction
from .channels import SubcarrierGrid, _noise
from .errors import ConfigurationError
from .precoder import (
    SquintTrajectory,
    array_gain,
    squint_trajectory_config,
    subcarrier_pointing,
)
from .scene import AngularRange

__all__ = [
    "TrackingPlan",
    "TrackingResult",
    "HorizontalSearch",
    "VerticalSearch",
    "squint_thresholds",
    "partition_grids",
    "horizontal_search",
    "vertical_search",
    "sa_cp_bt",
    "gain_vs_distance",
]


def squint_thresholds(
    geom: ArrayGeometry, grid: SubcarrierGrid, swap: bool = False
) -> tuple[float, float]:
    """Largest (elevation, azimuth) extents a single sweep resolves unambiguously.

    Inside these limits the array gain along a squint trajectory decays
    monotonically with angular distance from the user, so the strongest
    subcarrier is always the nearest pointing angle. The default pairs the
    elevation limit with the horizontal element count; ``swap=True`` selects
    the axis-matched pairing instead.
    """
    d_theta = 4.0 * geom.f_c / (geom.n_h * grid.f_hi)
    d_phi = 4.0 * geom.f_c / (geom.n_v * grid.f_hi)
    if swap:
        d_theta, d_phi = d_phi, d_theta
    return d_theta, d_phi


@dataclass(frozen=True)
class TrackingPlan:
    """Vertical partition of an angular range into sweep-sized grids."""

    range: AngularRange
    n_g: int
    t_bt: int
    threshold_theta: float
    threshold_phi: float

    def __post_init__(self):
        if self.n_g < 1 or self.t_bt < 1:
            raise ConfigurationError("n_g and t_bt must be at least 1")
        if self.range.theta_max < self.range.theta_min:
            raise ConfigurationError("empty elevation range")
        if self.range.phi_max < self.range.phi_min:
            raise ConfigurationError("empty azimuth range")
        height = self.range.theta_max - self.range.theta_min
        if height / self.n_g > self.threshold_theta * (1.0 + 1e-9):
            raise ConfigurationError("per-grid height exceeds the sweep threshold")

    @property
    def grid_height(self) -> float:
        return (self.range.theta_max - self.range.theta_min) / self.n_g

    def grid_mid(self, g: int) -> float:
        """Elevation midline of grid ``g``; the horizontal sweep runs along it."""
        return self.range.theta_min + (g + 0.5) * self.grid_height


@dataclass(frozen=True)
class TrackingResult:
    """Refined user angles plus the feedback indices that produced them.

    ``feedback`` packs (subcarrier, slot, grid) from the horizontal stage and
    (subcarrier, slot) from the vertical one. The amplitude traces keep every
    per-subcarrier magnitude the receiver observed, one row per sweep slot.
    """

    phi_hat: float
    theta_hat: float
    feedback: tuple[int, int, int, int, int]
    slots_used: int
    snr: float
    trace_h: np.ndarray = field(repr=False)
    trace_v: np.ndarray = field(repr=False)

    def __post_init__(self):
        m_h, t_h, g, m_v, t_v = self.feedback
        n_g, t_bt, m_count = self.trace_h.shape
        ok = (
            0 <= m_h < m_count
            and 0 <= t_h < t_bt
            and 0 <= g < n_g
            and 0 <= m_v < self.trace_v.shape[1]
            and 0 <= t_v < self.trace_v.shape[0]
        )
        if not ok:
            raise ConfigurationError("feedback indices outside the sweep ranges")


class HorizontalSearch(NamedTuple):
    m_star: int
    t_star: int
    g_star: int
    phi_hat: float
    amplitudes: np.ndarray


class VerticalSearch(NamedTuple):
    m_star: int
    t_star: int
    theta_hat: float
    amplitudes: np.ndarray


def partition_grids(
    angular_range: AngularRange,
    geom: ArrayGeometry,
    grid: SubcarrierGrid,
    t_bt: int = 1,
    swap_thresholds: bool = False,
) -> TrackingPlan:
    """Split a coarse angular range vertically into unambiguous sweep grids.

    The grid count is the smallest integer that brings each grid's height
    under the elevation threshold, never below one.
    """
    d_theta, d_phi = squint_thresholds(geom, grid, swap=swap_thresholds)
    height = angular_range.theta_max - angular_range.theta_min
    if height < 0:
        raise ConfigurationError("empty elevation range")
    n_g = max(1, math.ceil(height / d_theta))
    return TrackingPlan(
        range=angular_range,
        n_g=n_g,
        t_bt=t_bt,
        threshold_theta=d_theta,
        threshold_phi=d_phi,
    )


def _sweep_rx(
    traj: SquintTrajectory,
    h_user: np.ndarray,
    grid: SubcarrierGrid,
    scale: float,
    n_c0: float,
    rng: np.random.Generator,
) -> np.ndarray:
    # y_m = h_m^H x_m with the probe power split evenly across subcarriers
    weights = np.stack([traj.weights(m) for m in range(grid.m_count)])
    y = np.einsum("me,me->m", np.conj(h_user), weights) * scale
    if n_c0 > 0:
        y = y + _noise(y.shape, n_c0, grid.subcarrier_bw, rng)
    return np.abs(y)


def horizontal_search(
    plan: TrackingPlan,
    h_user: np.ndarray,
    grid: SubcarrierGrid,
    geom: ArrayGeometry,
    n_c0: float = 0.0,
    p_t: float = 1.0,
    t_max: float = 1e-9,
    rng: np.random.Generator | int | None = None,
) -> HorizontalSearch:
    """Azimuth refinement: one left-to-right sweep per grid, strongest index wins.

    Each slot slides the beam across its share of the azimuth span at the
    grid's elevation midline. The receiver reports the (grid, slot,
    subcarrier) triple with the largest magnitude; ties resolve to the
    lexicographically smallest triple. The azimuth estimate is the pointing
    angle the winning subcarrier actually transmitted.
    """
    rng = np.random.default_rng(rng)
    m_count = grid.m_count
    width = plan.range.phi_max - plan.range.phi_min
    scale = math.sqrt(p_t / (m_count * geom.n_elements))
    amp = np.empty((plan.n_g, plan.t_bt, m_count))
    trajs: list[SquintTrajectory] = []
    for g in range(plan.n_g):
        theta_mid = plan.grid_mid(g)
        for t in range(plan.t_bt):
            start = Direction(theta_mid, plan.range.phi_min + t * width / plan.t_bt)
            end = Direction(theta_mid, plan.range.phi_min + (t + 1) * width / plan.t_bt)
            traj = squint_trajectory_config(start, end, grid, geom, t_max=t_max)
            trajs.append(traj)
            amp[g, t] = _sweep_rx(traj, h_user, grid, scale, n_c0, rng)
    # C-order argmax returns the first maximum, i.e. smallest (g, t, m)
    g_star, t_star, m_star = np.unravel_index(int(np.argmax(amp)), amp.shape)
    winner = trajs[g_star * plan.t_bt + t_star]
    phi_hat = subcarrier_pointing(winner, int(m_star)).phi
    return HorizontalSearch(int(m_star), int(t_star), int(g_star), float(phi_hat), amp)


def vertical_search(
    phi_hat: float,
    plan: TrackingPlan,
    h_user: np.ndarray,
    grid: SubcarrierGrid,
    geom: ArrayGeometry,
    n_c0: float = 0.0,
    p_t: float = 1.0,
    t_max: float = 1e-9,
    rng: np.random.Generator | int | None = None,
) -> VerticalSearch:
    """Elevation refinement: bottom-to-top sweeps at the estimated azimuth."""
    rng = np.random.default_rng(rng)
    m_count = grid.m_count
    height = plan.range.theta_max - plan.range.theta_min
    scale = math.sqrt(p_t / (m_count * geom.n_elements))
    amp = np.empty((plan.t_bt, m_count))
    trajs: list[SquintTrajectory] = []
    for t in range(plan.t_bt):
        start = Direction(plan.range.theta_min + t * height / plan.t_bt, phi_hat)
        end = Direction(plan.range.theta_min + (t + 1) * height / plan.t_bt, phi_hat)
        traj = squint_trajectory_config(start, end, grid, geom, t_max=t_max)
        trajs.append(traj)
        amp[t] = _sweep_rx(traj, h_user, grid, scale, n_c0, rng)
    t_star, m_star = np.unravel_index(int(np.argmax(amp)), amp.shape)
    theta_hat = subcarrier_pointing(trajs[t_star], int(m_star)).theta
    return VerticalSearch(int(m_star), int(t_star), float(theta_hat), amp)


def sa_cp_bt(
    angular_range: AngularRange,
    h_user: np.ndarray,
    geom: ArrayGeometry,
    grid: SubcarrierGrid,
    t_bt: int = 1,
    n_c0: float = 0.0,
    p_t: float = 1.0,
    t_max: float = 1e-9,
    rng: np.random.Generator | int | None = None,
    swap_thresholds: bool = False,
) -> TrackingResult:
    """Full cross-pattern refinement: partition, horizontal pass, vertical pass.

    Consumes ``n_g * t_bt + t_bt`` probing slots. The reported SNR is the
    winning horizontal sample against the per-subcarrier noise power,
    infinite when the run is noiseless.
    """
    rng = np.random.default_rng(rng)
    plan = partition_grids(
        angular_range, geom, grid, t_bt=t_bt, swap_thresholds=swap_thresholds
    )
    hor = horizontal_search(
        plan, h_user, grid, geom, n_c0=n_c0, p_t=p_t, t_max=t_max, rng=rng
    )
    ver = vertical_search(
        hor.phi_hat, plan, h_user, grid, geom, n_c0=n_c0, p_t=p_t, t_max=t_max, rng=rng
    )
    peak = float(hor.amplitudes[hor.g_star, hor.t_star, hor.m_star])
    if n_c0 > 0 and peak > 0:
        snr = 10.0 * math.log10(peak**2 / (n_c0 * grid.subcarrier_bw))
    else:
        snr = math.inf
    return TrackingResult(
        phi_hat=hor.phi_hat,
        theta_hat=ver.theta_hat,
        feedback=(hor.m_star, hor.t_star, hor.g_star, ver.m_star, ver.t_star),
        slots_used=plan.n_g * plan.t_bt + plan.t_bt,
        snr=snr,
        trace_h=hor.amplitudes,
        trace_v=ver.amplitudes,
    )


def gain_vs_distance(
    user: Direction, traj: SquintTrajectory
) -> tuple[np.ndarray, np.ndarray]:
    """Per-subcarrier gain at ``user`` and squared angular distance to the track.

    The distance pairs each subcarrier's pointing angle with the user
    position; inside the sweep thresholds the gain must fall as this
    distance grows, which is what makes argmax feedback trustworthy.
    """
    dirs = subcarrier_pointing(traj)
    dist = np.array(
        [(user.phi - p.phi) ** 2 + (user.theta - p.theta) ** 2 for p in dirs]
    )
    gains = np.array(
        [
            array_gain(user, f, traj.delays, traj.ps_column, traj.geom)
            for f in traj.grid.frequencies
        ]
    )
    return gains, dist
