import numpy as np
import pytest
from hypothesis import given, strategies as st

from trilbm.analysis import dispersion_sweep, param_set
from trilbm.harness import NORMALIZED_MODE_SIDE, triangle_lattice, triangle_mode_eigenvalue
from trilbm.mesh import build_d2t4_periodic, build_d2t7_periodic
from trilbm.scheme import HOMOGENEOUS, Stepper
from trilbm.spectral import (
    ConvergenceError,
    arnoldi,
    dirichlet_modes,
    eig_to_continuum,
    pipe_diffusivity,
    reflection_projector,
    rho_modes,
    row_average_projector,
    symmetric_projector,
    triangle_symmetry_group,
)


def _dense_by_modulus(A):
    d = np.linalg.eigvals(A)
    return d[np.argsort(-np.abs(d))]


@given(st.integers(0, 2**32 - 1))
def test_arnoldi_matches_dense_solver_on_random_maps(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((50, 50))
    rep = arnoldi(lambda v: A @ v, 50, nev=6, tol=1e-12, seed=seed)
    dense = _dense_by_modulus(A)
    for lam in rep.eigenvalues:
        assert np.min(np.abs(dense - lam)) <= 1e-9
    assert np.allclose(np.abs(rep.eigenvalues), np.abs(dense[:6]), atol=1e-9, rtol=0)
    assert np.all(rep.residuals <= 1e-10)


def test_arnoldi_on_known_diagonal_map():
    lam = np.linspace(1.0, 0.01, 200)
    rep = arnoldi(lambda v: lam * v, 200, nev=4, tol=1e-12)
    assert np.allclose(np.sort(rep.eigenvalues.real)[::-1], lam[:4], atol=1e-10)


def test_arnoldi_reports_non_convergence():
    A = np.random.default_rng(0).standard_normal((60, 60))
    with pytest.raises(ConvergenceError) as info:
        arnoldi(lambda v: A @ v, 60, m=10, nev=6, tol=1e-15, max_restarts=0)
    assert len(info.value.residuals) == 6


@pytest.mark.parametrize("scheme", ["d2t7", "d2t4"])
def test_triangle_symmetries_commute_with_the_step(scheme, rng):
    lat = triangle_lattice(scheme, 9 if scheme == "d2t7" else 6, 2.0)
    stp = Stepper(lat, param_set(f"{scheme}-order2", dx=lat.dx), HOMOGENEOUS)
    perms = triangle_symmetry_group(lat)
    assert len(perms) == 6
    x = rng.standard_normal(stp.size)
    for p in perms:
        gx = np.empty_like(x)
        gx[p] = x
        gAx = np.empty_like(x)
        gAx[p] = stp.apply(x)
        assert np.max(np.abs(stp.apply(gx) - gAx)) < 1e-14
    proj = symmetric_projector(perms)
    px = proj(x)
    assert np.allclose(proj(px), px, atol=1e-15)


def test_pipe_projectors_are_idempotent(rng):
    lat = build_d2t4_periodic(6, 3)
    for proj in (row_average_projector(lat), reflection_projector(lat)):
        x = rng.standard_normal(lat.n_nodes * lat.q)
        assert np.allclose(proj(proj(x)), proj(x), atol=1e-15)


@pytest.mark.parametrize("name", ["d2t7-order2", "d2t7-order4"])
def test_pipe_mode_agrees_with_plane_wave_analysis(name):
    p = param_set(name)
    res = pipe_diffusivity(build_d2t7_periodic(24, 4), p)
    wave = dispersion_sweep(p, [res.k], [0.0], cell="single", dps=40)[0]
    assert abs(res.mu_num - wave.mu_num) <= 1e-13 * abs(wave.mu_num)


def test_d2t4_pipe_agrees_with_two_node_cell():
    p = param_set("d2t4-order2")
    lat = build_d2t4_periodic(24, 3)
    res = pipe_diffusivity(lat, p)
    wave = dispersion_sweep(p, [res.k], [0.0], cell="pair", dps=40)[0]
    assert abs(res.mu_num - wave.mu_num) <= 1e-12 * abs(wave.mu_num)


def test_pipe_needs_periodic_lattice():
    lat = triangle_lattice("d2t7", 5, 1.0)
    with pytest.raises(ValueError):
        pipe_diffusivity(lat, param_set("d2t7-order2", dx=lat.dx))


def test_dirichlet_modes_small_triangle():
    lat = triangle_lattice("d2t7", 12, NORMALIZED_MODE_SIDE)
    rep = dirichlet_modes(lat, param_set("d2t7-order4", dx=lat.dx), nev=4, symmetric=True)
    assert np.all(rep.residuals <= 1e-10)
    assert np.max(np.abs(rep.Lambda_num.imag)) < 1e-10
    assert rep.Lambda_num[0].real == pytest.approx(triangle_mode_eigenvalue(1, 1, NORMALIZED_MODE_SIDE), rel=0.02)
    # The fundamental mode keeps one sign.
    assert np.all(rep.modes[:, 0] >= -1e-12)


def test_dirichlet_modes_parameter_checks():
    lat = triangle_lattice("d2t7", 6, 1.0)
    with pytest.raises(ValueError):
        dirichlet_modes(lat, param_set("d2t7-order2"), nev=2)
    with pytest.raises(ValueError):
        dirichlet_modes(build_d2t7_periodic(4, 4), param_set("d2t7-order2"), nev=2)


def test_eig_to_continuum_inverts_exponential():
    dt, scale = 0.01, 2.5
    rates = np.array([0.3, 1.7, 12.0])
    lam = np.exp(-rates * scale * dt)
    assert np.allclose(eig_to_continuum(lam, scale, dt).real, rates, rtol=1e-12)


def test_rho_modes_normalization():
    lat = build_d2t7_periodic(3, 3)
    v = np.random.default_rng(2).standard_normal((lat.n_nodes * lat.q, 2)) * (1 + 2j)
    modes = rho_modes(v, lat)
    assert np.allclose(np.max(np.abs(modes), axis=0), 1.0)
    assert np.allclose(modes.max(axis=0), 1.0)
