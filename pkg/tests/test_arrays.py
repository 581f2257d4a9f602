"""Steering-vector, Dirichlet-kernel, and dictionary checks against independent oracles."""

import cmath
import math

import numpy as np
import pytest

from isacsim.arrays import (
    ArrayGeometry,
    BeamspaceDictionary,
    Direction,
    beamspace_dictionary,
    dirichlet,
    steering_derivatives,
    steering_vector,
    steering_vectors,
)
from isacsim.errors import ConfigurationError


def steering_oracle(direction, freq, geom):
    """Element-by-element scalar evaluation, independent of any vectorised path."""
    out = []
    for i_h in range(geom.n_h):
        for i_v in range(geom.n_v):
            phase = (
                math.pi
                * (freq / geom.f_c)
                * (
                    math.sin(direction.phi) * math.sin(direction.theta) * i_h
                    + math.cos(direction.theta) * i_v
                )
            )
            out.append(cmath.exp(1j * phase) / math.sqrt(geom.n_h * geom.n_v))
    return np.array(out)


def test_steering_matches_scalar_oracle():
    geom = ArrayGeometry(n_h=8, n_v=4, f_c=100e9)
    rng = np.random.default_rng(7)
    for _ in range(20):
        d = Direction(theta=rng.uniform(0, np.pi), phi=rng.uniform(-np.pi / 2, np.pi / 2))
        f = rng.uniform(96e9, 104e9)
        a = steering_vector(d, f, geom)
        assert np.max(np.abs(a - steering_oracle(d, f, geom))) < 1e-12
        assert abs(np.linalg.norm(a) - 1.0) < 1e-12


def test_single_element_array_is_trivial():
    geom = ArrayGeometry(n_h=1, n_v=1)
    a = steering_vector(Direction(0.7, 0.3), 99e9, geom)
    assert a.shape == (1,)
    assert abs(a[0] - 1.0) < 1e-15


def test_steering_vectors_stack_matches_single_calls():
    geom = ArrayGeometry(n_h=4, n_v=4)
    d = Direction(1.9, -0.4)
    freqs = np.linspace(96e9, 104e9, 5)
    stack = steering_vectors(d, freqs, geom)
    for m, f in enumerate(freqs):
        assert np.max(np.abs(stack[m] - steering_vector(d, f, geom))) < 1e-12


def test_derivatives_match_finite_differences():
    geom = ArrayGeometry(n_h=8, n_v=8, f_c=100e9)
    rng = np.random.default_rng(11)
    eps = 1e-7
    for _ in range(10):
        th = rng.uniform(0.2, np.pi - 0.2)
        ph = rng.uniform(-1.2, 1.2)
        f = rng.uniform(96e9, 104e9)
        _, d_th, d_ph = steering_derivatives(Direction(th, ph), f, geom)
        fd_th = (
            steering_vector(Direction(th + eps, ph), f, geom)
            - steering_vector(Direction(th - eps, ph), f, geom)
        ) / (2 * eps)
        fd_ph = (
            steering_vector(Direction(th, ph + eps), f, geom)
            - steering_vector(Direction(th, ph - eps), f, geom)
        ) / (2 * eps)
        assert np.max(np.abs(d_th - fd_th)) < 1e-5
        assert np.max(np.abs(d_ph - fd_ph)) < 1e-5


def test_azimuth_derivative_vanishes_at_zenith():
    geom = ArrayGeometry(n_h=4, n_v=4)
    _, _, d_phi = steering_derivatives(Direction(theta=0.0, phi=0.9), 100e9, geom)
    assert np.max(np.abs(d_phi)) < 1e-15


def dirichlet_oracle(x, n):
    """Symmetric phasor sum; real by construction, no pole branch involved."""
    return sum(cmath.exp(1j * math.pi * x * (k - (n - 1) / 2)) for k in range(n)).real


def test_dirichlet_values_and_pole():
    assert abs(dirichlet(0.0, 16) - 16.0) < 1e-12
    assert abs(dirichlet(2.0 / 16.0, 16)) < 1e-12


def test_dirichlet_matches_phasor_sum_including_near_poles():
    rng = np.random.default_rng(3)
    xs = np.concatenate(
        [rng.uniform(-4, 4, 200), [0.0, 2.0, -2.0, 4.0], 2.0 + 1e-13 * rng.standard_normal(5)]
    )
    for n in (4, 8, 16):
        for x in xs:
            assert abs(dirichlet(x, n) - dirichlet_oracle(x, n)) < 1e-9 * n


def test_dictionary_is_orthonormal_at_critical_sampling():
    geom = ArrayGeometry(n_h=4, n_v=8)
    dic = beamspace_dictionary(geom, n_dh=4, n_dv=8)
    gram = dic.codewords.conj().T @ dic.codewords
    assert dic.n_d == 32
    assert np.max(np.abs(gram - np.eye(32))) < 1e-10


def test_dictionary_column_ordering():
    geom = ArrayGeometry(n_h=2, n_v=2)
    dic = beamspace_dictionary(geom, n_dh=4, n_dv=4)
    i, j = 3, 1
    col = dic.codewords[:, dic.flat_index(i, j)]
    expect = np.kron(
        np.exp(1j * np.pi * np.arange(2) * dic.u_grid[i]),
        np.exp(1j * np.pi * np.arange(2) * dic.v_grid[j]),
    ) / 2.0
    assert np.max(np.abs(col - expect)) < 1e-12


def test_inner_product_factors_into_dirichlet_product():
    # |a(d1)^H a(d2)| = |Phi_nh(du) * Phi_nv(dv)| / n_elements for the cosine gaps
    geom = ArrayGeometry(n_h=8, n_v=4)
    rng = np.random.default_rng(23)
    for _ in range(25):
        d1 = Direction(rng.uniform(0, np.pi), rng.uniform(-np.pi / 2, np.pi / 2))
        d2 = Direction(rng.uniform(0, np.pi), rng.uniform(-np.pi / 2, np.pi / 2))
        f = rng.uniform(96e9, 104e9)
        u1, w1 = d1.cos_pair
        u2, w2 = d2.cos_pair
        lhs = abs(np.vdot(steering_vector(d1, f, geom), steering_vector(d2, f, geom)))
        rhs = abs(
            dirichlet((f / geom.f_c) * (u2 - u1), geom.n_h)
            * dirichlet((f / geom.f_c) * (w2 - w1), geom.n_v)
        ) / geom.n_elements
        assert abs(lhs - rhs) < 1e-10


def test_geometry_validation():
    with pytest.raises(ConfigurationError):
        ArrayGeometry(n_h=8, n_v=8, q_h=3)
    with pytest.raises(ConfigurationError):
        ArrayGeometry(n_h=0, n_v=8)
    geom = ArrayGeometry(n_h=8, n_v=4, q_h=4, q_v=2)
    assert geom.elements_per_subarray == (2, 2)
    assert geom.n_subarrays == 8
