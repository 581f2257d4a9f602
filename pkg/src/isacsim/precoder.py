"""True-time-delay hybrid precoding and beam-squint trajectory control.

The hardware chain per subcarrier m is

    x_m = diag(exp(j*2*pi*f_m*tau)) @ exp(j*PS) @ F_D[m] @ s_m

with one delay tau per subarray (broadcast to its elements), unit-modulus
phase shifters shared across subcarriers, and a free digital stage. Because
the delay phase grows linearly in frequency while the phase shifters are
flat, the analog beam direction can be made to march across subcarriers
between two chosen endpoints; all trajectory math below is exact at the edge
subcarriers when every element owns its own delay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .arrays import ArrayGeometry, Direction, dirichlet, steering_vector
from .channels import CommChannel, SubcarrierGrid, TargetResponse
from .errors import ConfigurationError, TtdRangeExceeded

__all__ = [
    "HybridPrecoder",
    "SquintTrajectory",
    "FactorizeResult",
    "ttd_phase_matrix",
    "transmit",
    "squint_trajectory_config",
    "subcarrier_pointing",
    "array_gain",
    "beam_pattern",
    "equivalent_channels",
    "hybrid_factorize",
]


def ttd_phase_matrix(
    delays: np.ndarray, freq: float, geom: ArrayGeometry, t_max: float | None = None
) -> np.ndarray:
    """Diagonal of the delay-network matrix at ``freq``: exp(j*2*pi*f*tau_n).

    ``delays`` has shape (q_h, q_v); each subarray value is broadcast to its
    l_h x l_v block of elements in the canonical row-major flattening. Delays
    must be non-negative, and within [0, t_max] when a bound is supplied.
    """
    delays = np.asarray(delays, dtype=float)
    if delays.shape != (geom.q_h, geom.q_v):
        raise ConfigurationError(
            f"delays shape {delays.shape} does not match subarray grid "
            f"({geom.q_h}, {geom.q_v})"
        )
    if np.any(delays < 0.0):
        raise ConfigurationError("delays must be non-negative")
    if t_max is not None and np.any(delays > t_max + 1e-18):
        raise ConfigurationError("delays exceed the hardware bound t_max")
    l_h, l_v = geom.elements_per_subarray
    per_element = np.kron(delays, np.ones((l_h, l_v))).ravel()
    return np.exp(2j * np.pi * freq * per_element)


@dataclass(frozen=True)
class HybridPrecoder:
    """Delay + phase-shifter + digital precoder stack for one subcarrier grid.

    delays : (q_h, q_v) seconds, each inside [0, t_max]
    ps_phases : (n_elements, n_rf) phase-shifter angles in radians
    digital : (m_count, n_rf, n_streams) complex baseband weights
    """

    delays: np.ndarray
    ps_phases: np.ndarray
    digital: np.ndarray
    geom: ArrayGeometry
    grid: SubcarrierGrid
    t_max: float = 1e-9
    p_t: float | None = None

    def __post_init__(self):
        if np.any(self.delays < -1e-18) or np.any(self.delays > self.t_max + 1e-18):
            raise ConfigurationError("delays fall outside [0, t_max]")
        if self.ps_phases.shape[0] != self.geom.n_elements:
            raise ConfigurationError("ps_phases rows must equal the element count")
        if self.digital.shape[0] != self.grid.m_count:
            raise ConfigurationError("digital stage must cover every subcarrier")
        if self.digital.shape[1] != self.ps_phases.shape[1]:
            raise ConfigurationError("digital rows must match the RF chain count")

    @property
    def n_rf(self) -> int:
        return self.ps_phases.shape[1]

    @property
    def n_streams(self) -> int:
        return self.digital.shape[2]

    def analog_matrix(self, m: int) -> np.ndarray:
        """F_T[m] @ F_P as a dense (n_elements, n_rf) matrix."""
        tph = ttd_phase_matrix(self.delays, self.grid.frequencies[m], self.geom)
        return tph[:, None] * np.exp(1j * self.ps_phases)

    def matrix(self, m: int) -> np.ndarray:
        """Full per-subcarrier precoder F_m, shape (n_elements, n_streams)."""
        return self.analog_matrix(m) @ self.digital[m]

    def matrices(self) -> np.ndarray:
        return np.stack([self.matrix(m) for m in range(self.grid.m_count)])

    def power(self) -> np.ndarray:
        """Per-subcarrier transmit power tr(F_m F_m^H)."""
        return np.array(
            [np.sum(np.abs(self.matrix(m)) ** 2) for m in range(self.grid.m_count)]
        )


def transmit(
    precoder: HybridPrecoder, symbols: np.ndarray, m: int | None = None
) -> np.ndarray:
    """Transmit vectors x_m = F_m s_m.

    With ``m`` given, ``symbols`` is the (n_streams,) vector for that
    subcarrier; otherwise (m_count, n_streams) and the full stack is returned.
    """
    symbols = np.asarray(symbols)
    if m is not None:
        return precoder.matrix(m) @ symbols
    return np.stack(
        [precoder.matrix(mm) @ symbols[mm] for mm in range(precoder.grid.m_count)]
    )


@dataclass(frozen=True)
class SquintTrajectory:
    """Analog probe whose beam slides from ``start`` (edge subcarrier 1) to ``end`` (edge M).

    Holds the per-subarray delays and the single phase-shifter column that
    realize the slide; ``weights(m)`` gives the resulting unit-modulus element
    weights at subcarrier m (norm sqrt(n_elements)).
    """

    start: Direction
    end: Direction
    delays: np.ndarray
    ps_column: np.ndarray = field(repr=False)
    geom: ArrayGeometry
    grid: SubcarrierGrid
    nominal_bandwidth: bool = False

    def weights(self, m: int) -> np.ndarray:
        tph = ttd_phase_matrix(self.delays, self.grid.frequencies[m], self.geom)
        return tph * np.exp(1j * self.ps_column)


def _interp_coeffs(grid: SubcarrierGrid, nominal_bandwidth: bool) -> tuple[np.ndarray, np.ndarray]:
    # endpoint mixing weights per subcarrier; affine (sum to one) unless the
    # nominal-bandwidth compatibility variant is requested
    f = grid.frequencies
    denom = grid.bandwidth if nominal_bandwidth else grid.span
    if denom <= 0:
        raise ConfigurationError("trajectory needs a positive bandwidth")
    c0 = (f[-1] - f) * f[0] / (denom * f)
    c1 = (f - f[0]) * f[-1] / (denom * f)
    return c0, c1


def squint_trajectory_config(
    start: Direction,
    end: Direction,
    grid: SubcarrierGrid,
    geom: ArrayGeometry,
    t_max: float = 1e-9,
    nominal_bandwidth: bool = False,
) -> SquintTrajectory:
    """Delay/phase settings that point the beam at ``start`` for the lowest
    subcarrier and ``end`` for the highest.

    Solves the two per-element phase alignment conditions for the delay slope
    and the flat phase, averages delays over each subarray, and shifts the
    common delay so the smallest tap is zero (a common delay is a global
    phase). Raises TtdRangeExceeded when the required span does not fit.
    """
    u0, w0 = start.cos_pair
    u1, w1 = end.cos_pair
    f_lo, f_hi = grid.f_lo, grid.f_hi
    denom = grid.bandwidth if nominal_bandwidth else grid.span
    if denom <= 0:
        raise ConfigurationError("trajectory needs a positive bandwidth")
    i_h, i_v = geom.element_indices()
    slope = (f_hi * (u1 * i_h + w1 * i_v) - f_lo * (u0 * i_h + w0 * i_v)) / (
        2.0 * geom.f_c * denom
    )
    l_h, l_v = geom.elements_per_subarray
    per_sub = slope.reshape(geom.n_h, geom.n_v)
    per_sub = per_sub.reshape(geom.q_h, l_h, geom.q_v, l_v).mean(axis=(1, 3))
    per_sub -= per_sub.min()
    span = float(per_sub.max())
    if span > t_max:
        raise TtdRangeExceeded(required_span=span, t_max=t_max)
    element_delay = np.kron(per_sub, np.ones((l_h, l_v))).ravel()
    ps = np.pi * (f_lo / geom.f_c) * (u0 * i_h + w0 * i_v) - 2.0 * np.pi * f_lo * element_delay
    return SquintTrajectory(
        start=start,
        end=end,
        delays=per_sub,
        ps_column=ps,
        geom=geom,
        grid=grid,
        nominal_bandwidth=nominal_bandwidth,
    )


def subcarrier_pointing(
    traj: SquintTrajectory, m: int | None = None
) -> Direction | list[Direction]:
    """Beam pointing direction at subcarrier ``m`` (or all subcarriers).

    The endpoint directional cosines mix with frequency-dependent affine
    weights, then invert back to angles; arguments are clamped to the valid
    cosine range. Exact at both edge subcarriers. For equal-elevation sweeps
    this reduces to mixing sin(phi) directly at fixed theta; the cosine-space
    route keeps the answer on the pattern maximum when elevation varies too.
    """
    u0, w0 = traj.start.cos_pair
    u1, w1 = traj.end.cos_pair
    c0, c1 = _interp_coeffs(traj.grid, traj.nominal_bandwidth)
    u = np.clip(c0 * u0 + c1 * u1, -1.0, 1.0)
    w = np.clip(c0 * w0 + c1 * w1, -1.0, 1.0)
    theta = np.arccos(w)
    sin_theta = np.sqrt(np.maximum(1.0 - w * w, 0.0))
    ratio = np.divide(u, sin_theta, out=np.zeros_like(u), where=sin_theta > 1e-15)
    phi = np.arcsin(np.clip(ratio, -1.0, 1.0))
    if m is not None:
        return Direction(float(theta[m]), float(phi[m]))
    return [Direction(float(t), float(p)) for t, p in zip(theta, phi)]


def array_gain(
    direction: Direction,
    freq: float,
    delays: np.ndarray,
    ps_column: np.ndarray,
    geom: ArrayGeometry,
) -> float:
    """Normalized analog beam gain |a^H F_T f_PS| / sqrt(n_elements), in [0, 1]."""
    v = ttd_phase_matrix(delays, freq, geom) * np.exp(1j * np.asarray(ps_column))
    a = steering_vector(direction, freq, geom)
    return float(np.abs(np.vdot(a, v)) / np.sqrt(geom.n_elements))


def trajectory_gain_closed_form(
    direction: Direction, m: int, traj: SquintTrajectory
) -> float:
    """Dirichlet-product form of the trajectory beam gain at subcarrier ``m``."""
    u, w = direction.cos_pair
    point = subcarrier_pointing(traj, m)
    up, wp = point.cos_pair
    f = traj.grid.frequencies[m]
    ratio = f / traj.geom.f_c
    return float(
        abs(
            dirichlet(ratio * (up - u), traj.geom.n_h)
            * dirichlet(ratio * (wp - w), traj.geom.n_v)
        )
        / traj.geom.n_elements
    )


def beam_pattern(
    delays: np.ndarray,
    ps_column: np.ndarray,
    freq: float,
    geom: ArrayGeometry,
    n_scan: int = 512,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized gain over an (n_scan x n_scan) grid of directional cosines.

    Returns (gains, u_grid, w_grid); gains[i, j] is the normalized response at
    horizontal cosine u_grid[i], vertical cosine w_grid[j]. Separable in the
    two axes, so the scan is two small matrix products rather than a loop.
    """
    u_grid = np.linspace(-1.0, 1.0, n_scan)
    w_grid = np.linspace(-1.0, 1.0, n_scan)
    v = (ttd_phase_matrix(delays, freq, geom) * np.exp(1j * np.asarray(ps_column))).reshape(
        geom.n_h, geom.n_v
    )
    ratio = freq / geom.f_c
    e_h = np.exp(-1j * np.pi * ratio * np.outer(np.arange(geom.n_h), u_grid))
    e_v = np.exp(-1j * np.pi * ratio * np.outer(np.arange(geom.n_v), w_grid))
    gains = np.abs(e_h.T @ v @ e_v) / geom.n_elements
    return gains, u_grid, w_grid


def equivalent_channels(
    comm: CommChannel,
    tgt: TargetResponse,
    delays: np.ndarray,
    geom: ArrayGeometry,
) -> tuple[CommChannel, TargetResponse]:
    """Fold the delay network into both channels.

    The downlink vector becomes F_T^H h and the echo response G F_T, both of
    which multiply the transmit-side steering by the conjugate delay phases;
    norms are untouched since the modulation is unit-modulus.
    """
    m_count = comm.grid.m_count
    phases = np.stack(
        [ttd_phase_matrix(delays, comm.grid.frequencies[m], geom) for m in range(m_count)]
    )
    comm_mod = CommChannel(
        vectors=comm.vectors * np.conj(phases)[None, :, :],
        specs=comm.specs,
        grid=comm.grid,
        k_f=comm.k_f,
    )
    tgt_mod = TargetResponse(
        tx_steering=tgt.tx_steering * np.conj(phases)[:, :, None],
        rx_steering=tgt.rx_steering,
        alphas=tgt.alphas,
        specs=tgt.specs,
        grid=tgt.grid,
        tx_geom=tgt.tx_geom,
        rx_geom=tgt.rx_geom,
    )
    return comm_mod, tgt_mod


@dataclass(frozen=True)
class FactorizeResult:
    precoder: HybridPrecoder
    residual: float
    objective_trace: tuple[float, ...]
    converged: bool


def _delay_tilt_init(
    targets: np.ndarray, geom: ArrayGeometry, freqs: np.ndarray, t_max: float
) -> np.ndarray:
    """Initial delays from the targets' per-subcarrier phase tilt.

    Adjacent-subcarrier cross-correlations inside one subarray rotate by
    2*pi*(subcarrier spacing)*tau regardless of the phase-shifter/digital
    content, as long as that content drifts slowly across frequency. Angles
    are referenced to the most reliable subarray so the wrap sits at the
    +-1/(2*spacing) boundary, far from physical delay spans.
    """
    m_count, _, n_s = targets.shape
    if m_count < 2:
        return np.zeros((geom.q_h, geom.q_v))
    l_h, l_v = geom.elements_per_subarray
    blocks = targets.reshape(m_count, geom.q_h, l_h, geom.q_v, l_v, n_s)
    w = np.einsum("mhawbu,mhawbu->hw", blocks[1:], np.conj(blocks[:-1]))
    if not np.any(np.abs(w) > 0):
        return np.zeros((geom.q_h, geom.q_v))
    anchor = np.unravel_index(int(np.argmax(np.abs(w))), w.shape)
    spacing = freqs[1] - freqs[0]
    tau = np.angle(w * np.conj(w[anchor])) / (2.0 * np.pi * spacing)
    tau -= tau.min()
    return np.clip(tau, 0.0, t_max)


def _delay_projector_init(
    targets: np.ndarray, geom: ArrayGeometry, freqs: np.ndarray, t_max: float
) -> np.ndarray:
    """Initial delays from column-space projectors of consecutive subcarriers.

    When the digital stage has full row rank, col(targets[m]) equals the
    delay-rotated analog span, so consecutive projectors satisfy
    P_{m+1}[n1, n2] = exp(j*2*pi*spacing*(tau_{n1} - tau_{n2})) * P_m[n1, n2]
    entry by entry; delay differences then read off the accumulated ratios in
    closed form, exactly on data consistent with the hardware model.
    """
    m_count, n_t, _ = targets.shape
    if m_count < 2:
        return np.zeros((geom.q_h, geom.q_v))
    accum = np.zeros((n_t, n_t), dtype=complex)
    prev = None
    for m in range(m_count):
        u, s, _ = np.linalg.svd(targets[m], full_matrices=False)
        rank = int(np.sum(s > 1e-10 * s[0])) if s.size and s[0] > 0 else 0
        proj = u[:, :rank] @ u[:, :rank].conj().T
        if prev is not None:
            accum += proj * np.conj(prev)
        prev = proj
    l_h, l_v = geom.elements_per_subarray
    per_sub = accum.reshape(
        geom.q_h, l_h, geom.q_v, l_v, geom.q_h, l_h, geom.q_v, l_v
    ).sum(axis=(1, 3, 5, 7))
    flat = per_sub.reshape(geom.n_subarrays, geom.n_subarrays)
    if not np.any(np.abs(flat) > 0):
        return np.zeros((geom.q_h, geom.q_v))
    anchor = int(np.argmax(np.sum(np.abs(flat), axis=1)))
    spacing = freqs[1] - freqs[0]
    tau = np.angle(flat[:, anchor]) / (2.0 * np.pi * spacing)
    tau = tau.reshape(geom.q_h, geom.q_v)
    tau -= tau.min()
    return np.clip(tau, 0.0, t_max)


def _ttd_step(
    delays: np.ndarray,
    ps_matrix: np.ndarray,
    digital: np.ndarray,
    targets: np.ndarray,
    freqs: np.ndarray,
    geom: ArrayGeometry,
    t_max: float,
) -> np.ndarray:
    """Per-subarray 1-D updates: maximize the real cross term over tau in [0, t_max].

    For each subarray the cross term is W(t) = sum_m Re(exp(j*2*pi*f_m*t) z_m).
    Candidates are the current tap, a weighted linear fit of the unwrapped
    phase slope of z_m across frequency (clipped to range), and a coarse-grid
    argmax; the winner is polished by a bounded 1-D search and accepted only
    if it beats the current tap, so the step never increases the objective.
    """
    m_count = targets.shape[0]
    l_h, l_v = geom.elements_per_subarray
    # z[m, n] = sum_u (F_P F_D)[n, u] * conj(target[n, u])
    z = np.stack(
        [np.sum((ps_matrix @ digital[m]) * np.conj(targets[m]), axis=1) for m in range(m_count)]
    )
    z_blocks = z.reshape(m_count, geom.q_h, l_h, geom.q_v, l_v).sum(axis=(2, 4))
    new = delays.copy()
    t_grid = np.linspace(0.0, t_max, 129)
    step = t_grid[1] - t_grid[0]
    phase_grid = np.exp(2j * np.pi * np.outer(t_grid, freqs))  # (n_grid, m)
    for qh in range(geom.q_h):
        for qv in range(geom.q_v):
            zq = z_blocks[:, qh, qv]

            def score(t):
                return float(np.sum(np.real(np.exp(2j * np.pi * freqs * t) * zq)))

            cand = [delays[qh, qv], t_grid[int(np.argmax(np.real(phase_grid @ zq)))]]
            weights = np.abs(zq)
            wsum = weights.sum()
            if wsum > 0:
                ang = np.unwrap(-np.angle(zq))
                fc = freqs - np.sum(weights * freqs) / wsum
                denom = np.sum(weights * fc * fc)
                if denom > 0:
                    t_fit = np.sum(weights * fc * ang) / (2 * np.pi * denom)
                    cand.append(min(max(float(t_fit), 0.0), t_max))
            best = max(cand, key=score)
            lo, hi = max(best - step, 0.0), min(best + step, t_max)
            res = minimize_scalar(
                lambda t: -score(t),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-12 * max(t_max, 1e-12)},
            )
            if score(float(res.x)) > score(best):
                best = float(res.x)
            if score(best) > score(delays[qh, qv]):
                new[qh, qv] = best
    return new


def _cm_rotation(u_basis: np.ndarray, n_starts: int = 96, n_iter: int = 200) -> np.ndarray:
    """Phases of an independent unit-modulus frame inside span(u_basis).

    Minimizes ||U q - exp(j theta)||_2 per column by exact alternation
    (U orthonormal, so q = U^H exp(j theta)). Column searches decouple, so
    the whole bundle of deterministic starts runs as one batched iteration.
    Near-exact fixed points are genuine constant-modulus members of the
    subspace; duplicates up to a global phase are discarded and the result
    is assembled greedily so its mixing matrix stays invertible. Without
    the rank guard the search can return one easy fixed point several
    times, which is useless as a phase-shifter seed.
    """
    n_t, rank = u_basis.shape
    rng = np.random.default_rng(0)
    extra = max(n_starts, 2 * rank) - rank
    rot = rng.normal(size=(rank, extra)) + 1j * rng.normal(size=(rank, extra))
    theta = np.angle(np.hstack([u_basis, u_basis @ rot]))
    for _ in range(n_iter):
        mix = u_basis.conj().T @ np.exp(1j * theta)
        theta = np.angle(u_basis @ mix)
    mix = u_basis.conj().T @ np.exp(1j * theta)
    gaps = np.linalg.norm(u_basis @ mix - np.exp(1j * theta), axis=0)
    order = np.argsort(gaps)
    chosen: list[int] = []
    unimod = np.exp(1j * theta)
    for strict in (True, False):
        for col in order:
            if len(chosen) == rank:
                break
            if col in chosen:
                continue
            dup = any(
                abs(np.vdot(unimod[:, c], unimod[:, col])) > 0.99 * n_t for c in chosen
            )
            trial = mix[:, chosen + [col]]
            sv = np.linalg.svd(trial, compute_uv=False)
            if strict and (dup or sv[-1] < 1e-6 * sv[0]):
                continue
            if not strict and sv[-1] <= 0:
                continue
            chosen.append(col)
    return theta[:, chosen]


def _ps_step(
    ps_matrix: np.ndarray, digital: np.ndarray, folded: np.ndarray
) -> np.ndarray:
    """Exact cyclic per-column unimodular updates of the phase-shifter matrix.

    ``folded`` is F_T^H applied to the targets, so the objective is
    sum_m ||F_P F_D[m] - folded[m]||_F^2; optimizing one phase-shifter column
    with the rest held fixed has the closed-form phase-of-accumulation answer,
    which keeps the objective non-increasing.
    """
    m_count = folded.shape[0]
    ps = ps_matrix.copy()
    resid = np.stack([folded[m] - ps @ digital[m] for m in range(m_count)])
    col_energy = np.array([np.sum(np.abs(digital[:, j, :]) ** 2) for j in range(ps.shape[1])])
    for j in range(ps.shape[1]):
        w = sum(resid[m] @ digital[m, j, :].conj() for m in range(m_count))
        w = w + ps[:, j] * col_energy[j]
        keep = np.abs(w) < 1e-300
        new_col = np.where(keep, ps[:, j], np.exp(1j * np.angle(w)))
        delta = new_col - ps[:, j]
        for m in range(m_count):
            resid[m] -= np.outer(delta, digital[m, j, :])
        ps[:, j] = new_col
    return ps


def hybrid_factorize(
    targets: np.ndarray,
    geom: ArrayGeometry,
    grid: SubcarrierGrid,
    n_rf: int,
    t_max: float = 1e-9,
    p_t: float | None = None,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> FactorizeResult:
    """Fit delay + phase-shifter + digital stages to per-subcarrier target matrices.

    Block-coordinate descent on sum_m ||F_T(tau)[m] F_P F_D[m] - targets[m]||_F^2:
    digital by least squares, phase shifters by exact unimodular column
    updates, delays by guarded 1-D searches, so the recorded objective never
    increases. Stops when the relative improvement drops below ``tol``.
    When ``p_t`` is given the digital stage is rescaled at the end so each
    subcarrier transmits p_t / m_count.
    """
    targets = np.asarray(targets, dtype=complex)
    m_count, n_t, _ = targets.shape
    if m_count != grid.m_count or n_t != geom.n_elements:
        raise ConfigurationError("targets shape must be (m_count, n_elements, n_streams)")
    freqs = grid.frequencies

    def tph_all(d):
        return np.stack([ttd_phase_matrix(d, f, geom) for f in freqs])

    def ps_from_delays(cand):
        # phase-shifter init from the delay-compensated stack: the analog
        # column space sits in the leading singular vectors, and the
        # constant-modulus rotation search aligns that basis with the
        # unimodular constraint before the big alternation starts
        compensated = np.conj(tph_all(cand))[:, :, None] * targets
        left, _, _ = np.linalg.svd(
            compensated.transpose(1, 0, 2).reshape(n_t, -1), full_matrices=False
        )
        psc = np.exp(1j * _cm_rotation(left[:, :n_rf]))
        if psc.shape[1] < n_rf:  # more chains than target rank: pad flat
            psc = np.hstack([psc, np.ones((n_t, n_rf - psc.shape[1]), dtype=complex)])
        return psc

    starts = []
    for cand in (
        _delay_projector_init(targets, geom, freqs, t_max),
        _delay_tilt_init(targets, geom, freqs, t_max),
    ):
        psc = ps_from_delays(cand)
        phases = tph_all(cand)
        dig0 = np.stack(
            [
                np.linalg.lstsq(phases[m][:, None] * psc, targets[m], rcond=None)[0]
                for m in range(m_count)
            ]
        )
        fit = float(
            sum(
                np.sum(np.abs(phases[m][:, None] * (psc @ dig0[m]) - targets[m]) ** 2)
                for m in range(m_count)
            )
        )
        starts.append((fit, cand, psc))
    _, delays, ps = min(starts, key=lambda item: item[0])

    def objective(d, psm, dig):
        phases = tph_all(d)
        return float(
            sum(
                np.sum(np.abs(phases[m][:, None] * (psm @ dig[m]) - targets[m]) ** 2)
                for m in range(m_count)
            )
        )

    digital = None
    trace = []
    floored = False
    # delays start from a closed-form estimate, so the flat stages settle
    # first; delay updates switch on once they stop moving (or at half budget)
    ttd_live = False
    for it in range(max_iter):
        phases = tph_all(delays)
        analog = [phases[m][:, None] * ps for m in range(m_count)]
        new_digital = np.stack(
            [np.linalg.lstsq(analog[m], targets[m], rcond=None)[0] for m in range(m_count)]
        )
        folded = np.conj(phases)[:, :, None] * targets
        new_ps = _ps_step(ps, new_digital, folded)
        new_delays = delays
        if ttd_live:
            new_delays = _ttd_step(new_delays, new_ps, new_digital, targets, freqs, geom, t_max)
        obj = objective(new_delays, new_ps, new_digital)
        if trace and obj > trace[-1]:
            # every substep is exact descent, so an uphill reading means the
            # rounding floor was hit; keep the previous iterate and stop,
            # unless the delay stage never ran, in which case turn it on
            if not ttd_live:
                ttd_live = True
                continue
            floored = True
            break
        delays, ps, digital = new_delays, new_ps, new_digital
        trace.append(obj)
        settled = it > 0 and trace[-2] - trace[-1] < tol * max(trace[-2], 1e-300)
        if settled:
            if ttd_live:
                break
            ttd_live = True
        elif not ttd_live and it >= max_iter // 2:
            ttd_live = True
    converged = floored or (
        len(trace) > 1 and trace[-2] - trace[-1] < tol * max(trace[-2], 1e-300)
    )
    # one last exact digital solve against the final analog stage
    phases = tph_all(delays)
    digital = np.stack(
        [
            np.linalg.lstsq(phases[m][:, None] * ps, targets[m], rcond=None)[0]
            for m in range(m_count)
        ]
    )
    precoder = HybridPrecoder(
        delays=delays,
        ps_phases=np.angle(ps),
        digital=digital,
        geom=geom,
        grid=grid,
        t_max=t_max,
        p_t=p_t,
    )
    if p_t is not None:
        budget = p_t / m_count
        scaled = digital.copy()
        for m in range(m_count):
            pw = np.sum(np.abs(precoder.matrix(m)) ** 2)
            if pw > 0:
                scaled[m] *= np.sqrt(budget / pw)
        precoder = HybridPrecoder(
            delays=delays,
            ps_phases=np.angle(ps),
            digital=scaled,
            geom=geom,
            grid=grid,
            t_max=t_max,
            p_t=p_t,
        )
    diff = sum(
        np.sum(np.abs(precoder.matrix(m) - targets[m]) ** 2) for m in range(m_count)
    )
    denom = np.sum(np.abs(targets) ** 2)
    residual = float(np.sqrt(diff / max(denom, 1e-300)))
    return FactorizeResult(
        precoder=precoder,
        residual=residual,
        objective_trace=tuple(trace),
        converged=converged,
    )
