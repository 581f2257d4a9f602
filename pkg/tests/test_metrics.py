"""Rates, angle-information bounds, the batch loss, and frame efficiency."""

import numpy as np
import pytest

from isacsim import (
    ArrayGeometry,
    ConfigurationError,
    Direction,
    FrameTiming,
    LossSample,
    NoiseConfig,
    SubcarrierGrid,
    TargetSpec,
    crb,
    fisher_information,
    isac_efficiency,
    isac_loss,
    spectral_efficiency,
    steering_vectors,
    target_response,
)

GEOM = ArrayGeometry(8, 8, f_c=100e9)
GRID = SubcarrierGrid(100e9, 8e9, 16)
NOISE = NoiseConfig(n_c0=1e-6, n_s0=1e-6, subcarrier_bw=GRID.subcarrier_bw)


def fd_information(targets, r_x, noise, step=1e-6):
    """Independent information oracle: central differences of the echo mean."""
    grid = targets.grid
    m_count, k = grid.m_count, targets.n_targets
    band = noise.subcarrier_bw * m_count
    dirs = list(targets.directions())
    cols = []
    for m in range(m_count):
        lam, vec = np.linalg.eigh(r_x[m])
        cols.append(vec * np.sqrt(np.clip(lam, 0.0, None))[None, :])

    def mean_stack(dirs_mod):
        out = []
        for m in range(m_count):
            a_t = np.stack(
                [steering_vectors(d, grid.frequencies[m:m + 1], targets.tx_geom)[0]
                 for d in dirs_mod], axis=1)
            a_r = np.stack(
                [steering_vectors(d, grid.frequencies[m:m + 1], targets.rx_geom)[0]
                 for d in dirs_mod], axis=1)
            g = (a_r * targets.alphas[m][None, :]) @ a_t.conj().T
            out.append(g @ cols[m])
        return np.concatenate([o.ravel() for o in out])

    jac = np.zeros((mean_stack(dirs).size, 2 * k), dtype=complex)
    for p in range(2 * k):
        j, axis = p % k, p // k  # elevation block first
        plus = [Direction(d.theta + (step if axis == 0 and i == j else 0.0),
                          d.phi + (step if axis == 1 and i == j else 0.0))
                for i, d in enumerate(dirs)]
        minus = [Direction(d.theta - (step if axis == 0 and i == j else 0.0),
                           d.phi - (step if axis == 1 and i == j else 0.0))
                 for i, d in enumerate(dirs)]
        jac[:, p] = (mean_stack(plus) - mean_stack(minus)) / (2 * step)
    return (2.0 / (band * noise.n_s0)) * np.real(jac.conj().T @ jac)


def random_scene(rng, k=2):
    tgts = [TargetSpec(Direction(rng.uniform(1.0, 2.1), rng.uniform(-0.9, 0.9)),
                       rng.uniform(8.0, 30.0), rcs=rng.uniform(0.5, 3.0))
            for _ in range(k)]
    resp = target_response(tgts, GRID, GEOM, GEOM, rng=rng)
    x = rng.normal(size=(16, 64, 6)) + 1j * rng.normal(size=(16, 64, 6))
    r_x = np.einsum("mei,mfi->mef", x, x.conj()) / 6
    return resp, r_x


def test_noise_config_positive():
    with pytest.raises(ConfigurationError):
        NoiseConfig(n_c0=0.0, n_s0=1e-6, subcarrier_bw=1.0)
    with pytest.raises(ConfigurationError):
        NoiseConfig(n_c0=1e-6, n_s0=-1.0, subcarrier_bw=1.0)


def test_se_zero_precoder():
    h = np.ones((2, 16, 64), dtype=complex)
    f = np.zeros((16, 64, 2), dtype=complex)
    total, per = spectral_efficiency(h, f, NOISE)
    assert total == 0.0
    assert np.all(per == 0.0)


def test_se_single_user_hand_value():
    # unit beam gain, unit-bandwidth subcarrier, noise variance 0.1
    noise = NoiseConfig(n_c0=0.1, n_s0=1.0, subcarrier_bw=1.0)
    h = np.zeros((1, 1, 4), dtype=complex)
    f = np.zeros((1, 4, 1), dtype=complex)
    h[0, 0, 0] = 1.0
    f[0, 0, 0] = 1.0
    total, per = spectral_efficiency(h, f, noise)
    assert total == pytest.approx(np.log2(11.0), rel=1e-12)
    assert per.shape == (1, 1)


def test_se_orthogonal_users_ignore_each_other():
    noise = NoiseConfig(n_c0=1e-3, n_s0=1.0, subcarrier_bw=1.0)
    h = np.zeros((2, 3, 8), dtype=complex)
    f = np.zeros((3, 8, 2), dtype=complex)
    h[0, :, 0] = 1.0
    h[1, :, 3] = 1.0
    f[:, 0, 0] = 1.0
    f[:, 3, 1] = 1.0
    _, per = spectral_efficiency(h, f, noise)
    alone = np.log2(1.0 + 1.0 / noise.comm_variance)
    assert np.allclose(per, alone, rtol=1e-12)


def test_se_interferer_never_helps():
    rng = np.random.default_rng(7)
    noise = NoiseConfig(n_c0=1e-2, n_s0=1.0, subcarrier_bw=1.0)
    for _ in range(20):
        h = rng.normal(size=(2, 4, 8)) + 1j * rng.normal(size=(2, 4, 8))
        f = rng.normal(size=(4, 8, 2)) + 1j * rng.normal(size=(4, 8, 2))
        _, per_both = spectral_efficiency(h, f, noise)
        solo = np.zeros_like(f)
        solo[:, :, 0] = f[:, :, 0]
        _, per_solo = spectral_efficiency(h, solo, noise)
        assert np.all(per_both[0] <= per_solo[0] + 1e-12)


def test_fim_zero_covariance():
    resp, _ = random_scene(np.random.default_rng(0))
    r_x = np.zeros((16, 64, 64), dtype=complex)
    fim = fisher_information(resp, r_x, NOISE)
    assert np.all(fim.matrix == 0.0)


def test_fim_linear_in_power():
    resp, r_x = random_scene(np.random.default_rng(1))
    a = fisher_information(resp, r_x, NOISE).matrix
    b = fisher_information(resp, 3.0 * r_x, NOISE).matrix
    assert np.allclose(b, 3.0 * a, rtol=1e-12, atol=0.0)


def test_fim_symmetric_psd():
    rng = np.random.default_rng(2)
    for _ in range(5):
        resp, r_x = random_scene(rng)
        fim = fisher_information(resp, r_x, NOISE)
        assert np.allclose(fim.matrix, fim.matrix.T, atol=1e-12)
        assert np.linalg.eigvalsh(fim.matrix).min() >= -1e-10 * np.trace(fim.matrix)
        assert fim.per_subcarrier.shape == (16, 4, 4)
        assert np.allclose(fim.per_subcarrier.sum(axis=0), fim.matrix, atol=1e-12)


def test_fim_matches_finite_difference_oracle():
    rng = np.random.default_rng(3)
    for _ in range(4):
        resp, r_x = random_scene(rng)
        fim = fisher_information(resp, r_x, NOISE)
        oracle = fd_information(resp, r_x, NOISE)
        rel = np.linalg.norm(fim.matrix - oracle) / np.linalg.norm(oracle)
        assert rel <= 1e-4


def test_crb_infinite_for_zero_information():
    resp, _ = random_scene(np.random.default_rng(4))
    fim = fisher_information(resp, np.zeros((16, 64, 64), dtype=complex), NOISE)
    assert crb(fim) == np.inf


def test_crb_power_doubling_halves():
    resp, r_x = random_scene(np.random.default_rng(5))
    c1 = crb(fisher_information(resp, r_x, NOISE))
    c2 = crb(fisher_information(resp, 2.0 * r_x, NOISE))
    assert c2 == pytest.approx(c1 / 2.0, rel=1e-9)


def test_crb_single_boresight_matches_direct_inverse():
    tgt = [TargetSpec(Direction(np.pi / 2, 0.0), 10.0, rcs=1.0)]
    resp = target_response(tgt, GRID, GEOM, GEOM, rng=3)
    r_iso = np.tile(np.eye(64, dtype=complex) / 64, (16, 1, 1))
    fim = fisher_information(resp, r_iso, NOISE)
    assert fim.matrix.shape == (2, 2)
    assert crb(fim) == pytest.approx(np.trace(np.linalg.inv(fim.matrix)), rel=1e-12)


def test_crb_monotone_under_added_power():
    rng = np.random.default_rng(6)
    resp, r_x = random_scene(rng)
    base = crb(fisher_information(resp, r_x, NOISE))
    eye = np.tile(np.eye(64, dtype=complex), (16, 1, 1))
    for eps in (1e-3, 1e-2, 1e-1):
        bumped = crb(fisher_information(resp, r_x + eps * eye, NOISE))
        assert bumped <= base + 1e-12
        base = bumped


def test_loss_optimal_batch_is_minus_one():
    batch = [LossSample(cor=0.3, cor_star=0.3, crb=2e-5, crb_min=2e-5, se=9.0)]
    assert isac_loss(batch, se_floor=5.0, eta_c=0.1) == pytest.approx(-1.0)
    # rate exactly at the floor leaves the hinge off
    edge = [LossSample(0.3, 0.3, 2e-5, 2e-5, 5.0)]
    assert isac_loss(edge, se_floor=5.0, eta_c=10.0) == pytest.approx(-1.0)


def test_loss_hand_batch():
    batch = [
        LossSample(cor=0.2, cor_star=0.4, crb=4e-5, crb_min=1e-5, se=3.0),
        LossSample(cor=0.5, cor_star=0.5, crb=2e-5, crb_min=1e-5, se=8.0),
    ]
    # sample 1: 0.5 * (0.25 - 0.1 * 2) = 0.025; sample 2: 1 * 0.5 = 0.5
    want = -(0.025 + 0.5) / 2
    assert isac_loss(batch, se_floor=5.0, eta_c=0.1) == pytest.approx(want, rel=1e-12)


def test_loss_rejects_bad_inputs():
    with pytest.raises(ConfigurationError):
        isac_loss([], se_floor=1.0, eta_c=0.1)
    with pytest.raises(ConfigurationError):
        isac_loss([LossSample(0.1, 0.2, 0.0, 1e-5, 1.0)], se_floor=1.0, eta_c=0.1)
    with pytest.raises(ConfigurationError):
        isac_loss([LossSample(0.1, 0.0, 1e-5, 1e-5, 1.0)], se_floor=1.0, eta_c=0.1)


def test_efficiency_hand_example():
    timing = FrameTiming(t_rs=0.02, t_data=0.08, n_sub=10, variant="vision-aided")
    assert timing.t_frame == pytest.approx(1.0, rel=1e-15)
    se_bar, crb_bar = isac_efficiency(4.0, 8e-5, timing)
    assert se_bar == pytest.approx(0.8 * 4.0, rel=1e-15)
    assert crb_bar == pytest.approx(1.25 * 8e-5, rel=1e-15)


def test_efficiency_all_data_time():
    timing = FrameTiming(t_rs=0.0, t_data=0.05, n_sub=4, variant="vision-aided")
    se_bar, crb_bar = isac_efficiency(7.0, 1e-5, timing)
    assert se_bar == 7.0
    assert crb_bar == 1e-5


def test_efficiency_sync_overhead_costs_rate():
    aided = FrameTiming(t_rs=0.02, t_data=0.08, n_sub=10, variant="vision-aided")
    rf = FrameTiming(t_rs=0.02, t_data=0.08, n_sub=10, t_ssb=0.05, variant="rf-only")
    assert isac_efficiency(4.0, 8e-5, rf)[0] < isac_efficiency(4.0, 8e-5, aided)[0]


def test_efficiency_product_preserved():
    rng = np.random.default_rng(8)
    for _ in range(10):
        timing = FrameTiming(t_rs=rng.uniform(0.0, 0.1), t_data=rng.uniform(0.01, 0.2),
                             n_sub=int(rng.integers(1, 20)),
                             t_ssb=rng.uniform(0.0, 0.3),
                             variant=rng.choice(["rf-only", "vision-aided"]))
        se, bound = rng.uniform(1.0, 20.0), rng.uniform(1e-6, 1e-3)
        se_bar, crb_bar = isac_efficiency(se, bound, timing)
        # the shared fraction cancels algebraically; floats keep it to ulps
        assert se_bar * crb_bar == pytest.approx(se * bound, rel=1e-12)


def test_frame_timing_validation():
    with pytest.raises(ConfigurationError):
        FrameTiming(t_rs=-0.01, t_data=0.08, n_sub=10)
    with pytest.raises(ConfigurationError):
        FrameTiming(t_rs=0.02, t_data=0.08, n_sub=0)
    with pytest.raises(ConfigurationError):
        FrameTiming(t_rs=0.02, t_data=0.08, n_sub=10, variant="hybrid")
    with pytest.raises(ConfigurationError):
        isac_efficiency(1.0, 1.0, FrameTiming(t_rs=0.02, t_data=0.0, n_sub=10))