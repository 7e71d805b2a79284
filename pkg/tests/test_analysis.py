import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from trilbm.analysis import (
    FORMAL_ORDER,
    InsufficientSpan,
    amplification_matrix,
    builtin_param_sets,
    d2t4_first_order_coeff,
    diffusivity,
    dispersion_sweep,
    exact_collision_matrices,
    henon_sigma,
    measured_order,
    mu_d2t4,
    mu_d2t7,
    neg_log_near_one,
    numerical_diffusivity,
    order_report,
    param_set,
    theta_d2t7,
)
from trilbm.basis import transition_matrices
from trilbm.mesh import build_d2t4_periodic, build_d2t7_periodic
from trilbm.scheme import Stepper, collision_matrices

SET_NAMES = sorted(builtin_param_sets())


def test_henon_sigma():
    assert henon_sigma(1.0) == 0.5
    assert henon_sigma(1.267949192431122) == pytest.approx(1 / math.sqrt(12), abs=1e-15)


def test_catalog_lookup():
    assert param_set("d2t7-order4").name == "d2t7-order4"
    assert param_set("t4-order3").scheme == "d2t4"
    with pytest.raises(KeyError):
        param_set("order4")
    with pytest.raises(KeyError):
        param_set("nope")
    assert set(FORMAL_ORDER) == set(SET_NAMES)


def test_order_report_flags_second_and_fourth_order():
    assert order_report(param_set("d2t7-order2")).formal_order == 2
    assert order_report(param_set("d2t7-order4")).formal_order == 4
    assert order_report(param_set("d2t4-order1")).formal_order == 1
    assert order_report(param_set("d2t4-order4")).formal_order == 4


@given(st.floats(0.05, 10.0), st.floats(0.05, 1.0), st.floats(0.1, 1.9))
def test_diffusivity_scales_with_zeta(zeta, a3, s1):
    assert mu_d2t7(zeta, a3, s1) == pytest.approx(zeta * mu_d2t7(1.0, a3, s1), rel=1e-13)
    assert mu_d2t4(zeta, a3, s1) == pytest.approx(2.0 * mu_d2t7(zeta, a3, s1), rel=1e-13)


@given(st.complex_numbers(max_magnitude=1e-3, allow_nan=False, allow_infinity=False))
def test_neg_log_near_one_matches_mpmath(gap):
    with mp.workdps(40):
        ref = -mp.log1p(-mp.mpc(gap.real, gap.imag))
    got = complex(neg_log_near_one(gap))
    assert abs(got - complex(ref)) <= 1e-15 * max(abs(complex(ref)), 1e-300) + 1e-300


@pytest.mark.parametrize("name", SET_NAMES)
def test_exact_collision_matrices_match_double(name):
    p = param_set(name)
    lat = build_d2t7_periodic(3, 3) if p.scheme == "d2t7" else build_d2t4_periodic(3, 3)
    K = collision_matrices(transition_matrices(lat), p)
    exact = exact_collision_matrices(p)
    for c, cname in enumerate(lat.class_names):
        Ke = np.array(exact[cname].tolist(), dtype=float)
        assert np.max(np.abs(Ke - K[c])) < 1e-13


@pytest.mark.parametrize("name", SET_NAMES)
def test_rest_state_is_conserved(name):
    w = np.linalg.eigvals(amplification_matrix(param_set(name), 0.0, 0.0))
    assert np.min(np.abs(w - 1.0)) < 1e-13
    assert np.sort(np.abs(w))[-2] < 1.0 - 1e-3


@given(st.sampled_from(SET_NAMES), st.floats(0.0, math.pi), st.floats(0.0, 2 * math.pi))
def test_plane_waves_do_not_grow(name, k, theta):
    w = np.linalg.eigvals(amplification_matrix(param_set(name), k, theta))
    assert np.max(np.abs(w)) <= 1.0 + 1e-12


@pytest.mark.parametrize(
    "name,builder,cell",
    [("d2t7-order4", lambda: build_d2t7_periodic(4, 3), "single"), ("d2t4-order3", lambda: build_d2t4_periodic(3, 4), "pair")],
)
def test_bloch_matrix_reproduces_mesh_spectrum(name, builder, cell):
    p = param_set(name)
    lat = builder()
    ev = np.linalg.eigvals(Stepper(lat, p).sparse_matrix().toarray())
    for m in [(1, 0), (0, 1), (1, 2), (2, 1)]:
        kv = 2 * np.pi * np.linalg.solve(lat.wraps, np.array(m, float))
        a = np.linalg.eigvals(amplification_matrix(p, np.hypot(*kv), np.arctan2(kv[1], kv[0]), cell))
        assert max(np.min(np.abs(ev - x)) for x in a) < 1e-12


def test_mpmath_matrix_matches_numpy():
    p = param_set("d2t4-order2")
    A = amplification_matrix(p, 0.3, 0.4, "pair")
    with mp.workdps(30):
        B = np.array(amplification_matrix(p, 0.3, 0.4, "pair", ctx=mp).tolist(), dtype=complex)
    assert np.max(np.abs(A - B)) < 1e-14


def test_dispersion_error_decreases_with_k():
    pts = dispersion_sweep(param_set("d2t7-order2"), [1e-2, 3e-2, 1e-1], dps=30)
    eps = [p.eps for p in pts]
    assert eps[0] < eps[1] < eps[2]
    assert measured_order(pts, min_span=5) == pytest.approx(2.0, abs=0.05)


def test_numerical_diffusivity_conventions():
    p = param_set("d2t7-order2")
    lam = 1.0 - 1e-4
    k = 0.1
    assert numerical_diffusivity(lam, k, p, "linear").real == pytest.approx(1e-4 / (k * k * p.dt))
    assert numerical_diffusivity(lam, k, p, "log").real == pytest.approx(-math.log(lam) / (k * k * p.dt), rel=1e-12)


def test_measured_order_on_synthetic_data():
    hs = np.geomspace(1e-3, 1e-1, 7)
    assert measured_order(list(zip(hs, 3.0 * hs**2))) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(InsufficientSpan):
        measured_order([(1.0, 1.0), (1.5, 2.0), (2.0, 4.0)])


def test_diffusivity_dispatch():
    assert diffusivity(param_set("d2t7-order2")) == pytest.approx(0.09375, abs=1e-15)
    assert d2t4_first_order_coeff(1.0, 0.25, 1.267949192431122) == pytest.approx(0.0, abs=1e-14)
    assert theta_d2t7(1.0, 0.25, 0.8, 1.428571428571428, 0.930232558139534) == pytest.approx(0.0, abs=1e-12)
