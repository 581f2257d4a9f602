"""Delay/phase precoding against index-mapping, pattern-argmax, and round-trip oracles."""

import math

import numpy as np
import pytest

from isacsim.arrays import ArrayGeometry, Direction, beamspace_dictionary, steering_vector
from isacsim.channels import (
    PathSpec,
    SubcarrierGrid,
    TargetSpec,
    UserChannelSpec,
    beamspace_channels,
    comm_channel,
    cs_correlation,
    target_response,
)
from isacsim.errors import ConfigurationError, TtdRangeExceeded
from isacsim.precoder import (
    HybridPrecoder,
    array_gain,
    beam_pattern,
    equivalent_channels,
    hybrid_factorize,
    squint_trajectory_config,
    subcarrier_pointing,
    trajectory_gain_closed_form,
    transmit,
    ttd_phase_matrix,
)

DESK_GEOM = ArrayGeometry(n_h=8, n_v=8, f_c=100e9)
DESK_GRID = SubcarrierGrid(f_c=100e9, bandwidth=8e9, m_count=16)
HALF_STEP = 1.0 / 511.0  # half the 512-point cosine scan step


def test_ttd_phase_matrix_index_mapping():
    geom = ArrayGeometry(n_h=4, n_v=4, q_h=2, q_v=2, f_c=100e9)
    rng = np.random.default_rng(7)
    delays = rng.uniform(0.0, 1e-9, size=(2, 2))
    freq = 103.1e9
    tph = ttd_phase_matrix(delays, freq, geom)
    for i_h in range(4):
        for i_v in range(4):
            flat = i_h * 4 + i_v
            expected = np.exp(2j * np.pi * freq * delays[i_h // 2, i_v // 2])
            assert abs(tph[flat] - expected) < 1e-12
    assert np.allclose(ttd_phase_matrix(np.zeros((2, 2)), freq, geom), 1.0)
    uniform = ttd_phase_matrix(np.full((2, 2), 0.3e-9), freq, geom)
    assert np.allclose(uniform, np.exp(2j * np.pi * freq * 0.3e-9))


def test_ttd_phase_matrix_validation():
    geom = ArrayGeometry(n_h=4, n_v=4, q_h=2, q_v=2, f_c=100e9)
    with pytest.raises(ConfigurationError):
        ttd_phase_matrix(np.zeros((4, 4)), 100e9, geom)
    with pytest.raises(ConfigurationError):
        ttd_phase_matrix(np.array([[-1e-12, 0.0], [0.0, 0.0]]), 100e9, geom)
    with pytest.raises(ConfigurationError):
        ttd_phase_matrix(np.full((2, 2), 2e-9), 100e9, geom, t_max=1e-9)


def _random_precoder(rng, geom, grid, n_rf=3, n_streams=2, t_max=1e-9, p_t=None):
    delays = rng.uniform(0.0, 0.8 * t_max, size=(geom.q_h, geom.q_v))
    ps = rng.uniform(-np.pi, np.pi, size=(geom.n_elements, n_rf))
    digital = rng.normal(size=(grid.m_count, n_rf, n_streams)) + 1j * rng.normal(
        size=(grid.m_count, n_rf, n_streams)
    )
    if p_t is not None:
        pre = HybridPrecoder(delays, ps, digital, geom, grid, t_max)
        for m in range(grid.m_count):
            digital[m] *= math.sqrt((p_t / grid.m_count) / np.sum(np.abs(pre.matrix(m)) ** 2))
    return HybridPrecoder(delays, ps, digital, geom, grid, t_max, p_t)


def test_transmit_matches_dense_chain():
    geom = ArrayGeometry(n_h=4, n_v=2, q_h=2, q_v=1, f_c=100e9)
    grid = SubcarrierGrid(f_c=100e9, bandwidth=4e9, m_count=3)
    rng = np.random.default_rng(3)
    pre = _random_precoder(rng, geom, grid)
    s = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    x = transmit(pre, s)
    for m in range(3):
        dense = (
            np.diag(ttd_phase_matrix(pre.delays, grid.frequencies[m], geom))
            @ np.exp(1j * pre.ps_phases)
            @ pre.digital[m]
        )
        assert np.allclose(x[m], dense @ s[m], atol=1e-12)
        assert np.allclose(transmit(pre, s[m], m=m), x[m])
    assert np.allclose(transmit(pre, np.zeros((3, 2))), 0.0)


def test_transmit_covariance_monte_carlo():
    geom = ArrayGeometry(n_h=4, n_v=4, f_c=100e9)
    grid = SubcarrierGrid(f_c=100e9, bandwidth=4e9, m_count=2)
    rng = np.random.default_rng(11)
    pre = _random_precoder(rng, geom, grid, n_rf=2, n_streams=2)
    f0 = pre.matrix(0)
    n_draws = 10_000
    s = (rng.normal(size=(n_draws, 2)) + 1j * rng.normal(size=(n_draws, 2))) / np.sqrt(2)
    x = s @ f0.T
    cov = x.T.conj() @ x / n_draws  # E[x x^H] transposed pair handled below
    expected = f0 @ f0.conj().T
    err = np.linalg.norm(cov.T - expected) / np.linalg.norm(expected)
    assert err < 0.05


def _scan_argmax(gains, u_grid, w_grid):
    i, j = np.unravel_index(int(np.argmax(gains)), gains.shape)
    return u_grid[i], w_grid[j]


def test_trajectory_endpoints_match_pattern_argmax():
    start = Direction(theta=1.9, phi=-0.5)
    end = Direction(theta=2.2, phi=0.4)
    traj = squint_trajectory_config(start, end, DESK_GRID, DESK_GEOM, t_max=1e-9)
    for m, ref in ((0, start), (DESK_GRID.m_count - 1, end)):
        gains, ug, wg = beam_pattern(
            traj.delays, traj.ps_column, DESK_GRID.frequencies[m], DESK_GEOM
        )
        u_hat, w_hat = _scan_argmax(gains, ug, wg)
        u_ref, w_ref = ref.cos_pair
        assert abs(u_hat - u_ref) <= HALF_STEP
        assert abs(w_hat - w_ref) <= HALF_STEP


def test_beam_pattern_agrees_with_direct_gain():
    rng = np.random.default_rng(5)
    traj = squint_trajectory_config(
        Direction(2.0, -0.3), Direction(2.1, 0.2), DESK_GRID, DESK_GEOM
    )
    freq = DESK_GRID.frequencies[4]
    gains, ug, wg = beam_pattern(traj.delays, traj.ps_column, freq, DESK_GEOM, n_scan=64)
    for _ in range(6):
        i, j = rng.integers(0, 64, size=2)
        w = wg[j]
        theta = math.acos(w)
        sin_t = math.sin(theta)
        if sin_t < abs(ug[i]):
            continue  # cosine pair not realizable by physical angles
        direction = Direction(theta=theta, phi=math.asin(ug[i] / sin_t))
        direct = array_gain(direction, freq, traj.delays, traj.ps_column, DESK_GEOM)
        assert abs(gains[i, j] - direct) < 1e-12


def test_pointing_matches_argmax_every_subcarrier():
    start = Direction(theta=1.9, phi=-0.5)
    end = Direction(theta=2.2, phi=0.4)
    traj = squint_trajectory_config(start, end, DESK_GRID, DESK_GEOM)
    points = subcarrier_pointing(traj)
    for m in range(DESK_GRID.m_count):
        gains, ug, wg = beam_pattern(
            traj.delays, traj.ps_column, DESK_GRID.frequencies[m], DESK_GEOM
        )
        u_hat, w_hat = _scan_argmax(gains, ug, wg)
        u_pt, w_pt = points[m].cos_pair
        assert abs(u_hat - u_pt) <= HALF_STEP
        assert abs(w_hat - w_pt) <= HALF_STEP


def test_gain_is_unity_on_the_pointing_trajectory():
    traj = squint_trajectory_config(
        Direction(1.9, -0.5), Direction(2.2, 0.4), DESK_GRID, DESK_GEOM
    )
    for m in range(DESK_GRID.m_count):
        point = subcarrier_pointing(traj, m)
        g = array_gain(
            point, DESK_GRID.frequencies[m], traj.delays, traj.ps_column, DESK_GEOM
        )
        assert abs(g - 1.0) < 1e-9


def test_degenerate_trajectory_holds_direction():
    fixed = Direction(theta=2.05, phi=0.25)
    traj = squint_trajectory_config(fixed, fixed, DESK_GRID, DESK_GEOM)
    assert np.any(traj.delays > 0)  # squint cancellation still needs delays
    for point in subcarrier_pointing(traj):
        assert abs(point.theta - fixed.theta) < 1e-9
        assert abs(point.phi - fixed.phi) < 1e-9


def test_horizontal_sweep_monotone_azimuth_fixed_elevation():
    theta = 2.0
    traj = squint_trajectory_config(
        Direction(theta, -0.4), Direction(theta, 0.5), DESK_GRID, DESK_GEOM
    )
    points = subcarrier_pointing(traj)
    phis = np.array([p.phi for p in points])
    thetas = np.array([p.theta for p in points])
    assert np.all(np.abs(thetas - theta) < 1e-9)
    assert np.all(np.diff(phis) > 0)
    # equal-elevation azimuth reduces to mixing sin(phi) with the affine weights
    f = DESK_GRID.frequencies
    c0 = (f[-1] - f) * f[0] / (DESK_GRID.span * f)
    expected = np.arcsin(c0 * math.sin(-0.4) + (1 - c0) * math.sin(0.5))
    assert np.allclose(phis, expected, atol=1e-12)


def test_trajectory_span_beyond_hardware_raises():
    with pytest.raises(TtdRangeExceeded) as exc:
        squint_trajectory_config(
            Direction(math.pi / 2 + 1e-3, -math.pi / 2 + 1e-3),
            Direction(math.pi - 1e-3, math.pi / 2 - 1e-3),
            DESK_GRID,
            DESK_GEOM,
            t_max=0.2e-9,
        )
    assert exc.value.required_span > 0.2e-9
    assert "span" in str(exc.value)


def test_nominal_bandwidth_variant_loses_endpoint_exactness():
    start = Direction(2.0, -0.3)
    end = Direction(2.0, 0.3)
    legacy = squint_trajectory_config(
        start, end, DESK_GRID, DESK_GEOM, nominal_bandwidth=True
    )
    first = subcarrier_pointing(legacy, 0)
    assert abs(first.phi - start.phi) > 1e-4
    exact = squint_trajectory_config(start, end, DESK_GRID, DESK_GEOM)
    assert abs(subcarrier_pointing(exact, 0).phi - start.phi) < 1e-12


def test_array_gain_closed_form_and_bound():
    rng = np.random.default_rng(17)
    traj = squint_trajectory_config(
        Direction(1.85, -0.6), Direction(2.25, 0.45), DESK_GRID, DESK_GEOM
    )
    for _ in range(25):
        direction = Direction(
            theta=rng.uniform(math.pi / 2, math.pi), phi=rng.uniform(-math.pi / 2, math.pi / 2)
        )
        m = int(rng.integers(0, DESK_GRID.m_count))
        g = array_gain(
            direction, DESK_GRID.frequencies[m], traj.delays, traj.ps_column, DESK_GEOM
        )
        closed = trajectory_gain_closed_form(direction, m, traj)
        assert abs(g - closed) < 1e-10
        assert g <= 1.0 + 1e-12


def _misaligned_profile(delays=None):
    geom = DESK_GEOM
    grid = SubcarrierGrid(f_c=100e9, bandwidth=8e9, m_count=8)
    dic = beamspace_dictionary(geom, 8, 8)
    theta = math.acos(dic.v_grid[3])
    user_dir = Direction(theta, math.asin((dic.u_grid[5] + 0.12) / math.sin(theta)))
    tgt_dir = Direction(theta, math.asin(dic.u_grid[2] / math.sin(theta)))
    rng = np.random.default_rng(23)
    comm = comm_channel([UserChannelSpec(los=PathSpec(user_dir, 60.0))], grid, geom, rng=rng)
    tgt = target_response([TargetSpec(tgt_dir, 45.0)], grid, geom, geom, rng=rng)
    if delays is not None:
        comm, tgt = equivalent_channels(comm, tgt, delays, geom)
    cor, _ = cs_correlation(comm, tgt, dic, dic)
    return cor


def test_equivalent_channels_dense_and_invariants():
    geom = ArrayGeometry(n_h=4, n_v=4, q_h=2, q_v=2, f_c=100e9)
    grid = SubcarrierGrid(f_c=100e9, bandwidth=4e9, m_count=3)
    rng = np.random.default_rng(9)
    comm = comm_channel(
        [UserChannelSpec(los=PathSpec(Direction(1.9, 0.3), 50.0))], grid, geom, rng=rng
    )
    tgt = target_response([TargetSpec(Direction(2.1, -0.2), 40.0)], grid, geom, geom, rng=rng)
    zero = equivalent_channels(comm, tgt, np.zeros((2, 2)), geom)
    assert np.allclose(zero[0].vectors, comm.vectors)
    assert np.allclose(zero[1].matrices(), tgt.matrices())
    delays = rng.uniform(0, 1e-9, size=(2, 2))
    comm_mod, tgt_mod = equivalent_channels(comm, tgt, delays, geom)
    for m in range(3):
        f_td = np.diag(ttd_phase_matrix(delays, grid.frequencies[m], geom))
        assert np.allclose(
            comm_mod.vectors[0, m], f_td.conj().T @ comm.vectors[0, m], atol=1e-12
        )
        assert np.allclose(tgt_mod.matrix(m), tgt.matrix(m) @ f_td, atol=1e-12)
        assert np.allclose(
            np.linalg.svd(tgt_mod.matrix(m), compute_uv=False),
            np.linalg.svd(tgt.matrix(m), compute_uv=False),
        )
    assert abs(np.linalg.norm(comm_mod.vectors) - np.linalg.norm(comm.vectors)) < 1e-9


def test_delay_grid_search_raises_correlation():
    base = _misaligned_profile()
    best = base
    i_h = np.arange(8)[:, None] * np.ones((1, 8))
    for slope in np.linspace(-0.5, 0.5, 21):
        delays = slope * 1e-12 * i_h
        delays = delays - delays.min()
        best = max(best, _misaligned_profile(delays))
    assert best > base


def _smooth_precoder(rng, geom, grid, n_rf, t_max=1e-9, p_t=None):
    """Valid generator with a frequency-smooth square digital stage, the shape
    every covariance-realization path in the package produces."""
    delays = rng.uniform(0.0, 0.8 * t_max, size=(geom.q_h, geom.q_v))
    ps = rng.uniform(-np.pi, np.pi, size=(geom.n_elements, n_rf))
    base = rng.normal(size=(n_rf, n_rf)) + 1j * rng.normal(size=(n_rf, n_rf))
    drift = 0.5 * (rng.normal(size=(n_rf, n_rf)) + 1j * rng.normal(size=(n_rf, n_rf)))
    digital = np.stack(
        [base + (m / grid.m_count) * drift for m in range(grid.m_count)]
    )
    if p_t is not None:
        pre = HybridPrecoder(delays, ps, digital, geom, grid, t_max)
        for m in range(grid.m_count):
            digital[m] *= math.sqrt(
                (p_t / grid.m_count) / np.sum(np.abs(pre.matrix(m)) ** 2)
            )
    return HybridPrecoder(delays, ps, digital, geom, grid, t_max, p_t)


def test_factorize_round_trip():
    geom = ArrayGeometry(n_h=8, n_v=8, q_h=4, q_v=4, f_c=100e9)
    rng = np.random.default_rng(31)
    p_t = 1.0
    truth = _smooth_precoder(rng, geom, DESK_GRID, n_rf=3, p_t=p_t)
    targets = truth.matrices()
    result = hybrid_factorize(targets, geom, DESK_GRID, n_rf=3, t_max=1e-9, p_t=p_t)
    assert result.residual <= 1e-6
    trace = np.array(result.objective_trace)
    assert np.all(np.diff(trace) <= 0)
    pre = result.precoder
    assert np.all(pre.delays >= 0) and np.all(pre.delays <= 1e-9)
    for m in range(DESK_GRID.m_count):
        assert abs(np.sum(np.abs(pre.matrix(m)) ** 2) - p_t / 16) < 1e-9


def test_factorize_matched_steering():
    geom = ArrayGeometry(n_h=4, n_v=4, f_c=100e9)
    grid = SubcarrierGrid(f_c=100e9, bandwidth=4e9, m_count=4)
    a = steering_vector(Direction(2.0, 0.35), 100e9, geom)
    targets = np.repeat(a[None, :, None], 4, axis=0)
    result = hybrid_factorize(targets, geom, grid, n_rf=1, t_max=1e-9)
    assert result.residual <= 1e-3


def test_factorize_budget_exhaustion_flag():
    geom = ArrayGeometry(n_h=4, n_v=4, q_h=2, q_v=2, f_c=100e9)
    grid = SubcarrierGrid(f_c=100e9, bandwidth=4e9, m_count=4)
    rng = np.random.default_rng(13)
    targets = rng.normal(size=(4, 16, 2)) + 1j * rng.normal(size=(4, 16, 2))
    result = hybrid_factorize(targets, geom, grid, n_rf=2, t_max=1e-9, max_iter=2)
    assert not result.converged
    assert result.residual > 0
