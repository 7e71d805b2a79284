import numpy as np
import pytest
from hypothesis import given, strategies as st

from trilbm.basis import (
    SingularMomentMatrix,
    d2t4_family,
    d2t7_family,
    lambda_tensor,
    moment_matrix,
    prop1_residuals,
    transition_matrices,
)
from trilbm.mesh import (
    HEX_VELOCITIES,
    LEFT_VELOCITIES,
    build_d2t4_equilateral,
    build_d2t4_periodic,
    build_d2t7_periodic,
    build_d2t7_triangle,
    perturb,
)

LATTICES = {
    "d2t7-periodic": lambda: build_d2t7_periodic(5, 4),
    "d2t7-triangle": lambda: build_d2t7_triangle(7),
    "d2t4-periodic": lambda: build_d2t4_periodic(3, 4),
    "d2t4-triangle": lambda: build_d2t4_equilateral(6),
}


@pytest.mark.parametrize("name", sorted(LATTICES))
def test_inverse_pairs(name):
    lat = LATTICES[name]()
    m = transition_matrices(lat)
    eye = np.eye(lat.q)
    assert np.max(np.abs(m.M @ m.Minv - eye)) < 1e-13
    assert np.max(np.abs(m.Mt @ m.Mt_inv - eye)) < 1e-13


@pytest.mark.parametrize("name", sorted(LATTICES))
def test_streaming_inverts_incoming_moments(name):
    lat = LATTICES[name]()
    res = prop1_residuals(lat, transition_matrices(lat))
    assert np.nanmax(res) <= 1e-10


@given(st.floats(0.02, 0.25), st.integers(0, 5000))
def test_streaming_identity_on_perturbed_mesh(amplitude, seed):
    lat = perturb(build_d2t4_equilateral(7), amplitude, seed)
    mats = transition_matrices(lat)
    assert np.nanmax(prop1_residuals(lat, mats)) <= 1e-10
    assert np.max(np.abs(mats.M @ mats.Minv - np.eye(4))) < 1e-10


def test_bravais_lattice_has_one_class():
    m = transition_matrices(build_d2t7_periodic(4, 4))
    assert m.M.shape == (1, 7, 7)
    # On a Bravais lattice the incoming matrix is the mirror of the outgoing one.
    assert np.allclose(m.P[0], m.Minv[0])


def test_family_sizes():
    assert len(d2t7_family()) == 7
    assert len(d2t4_family()) == 4


def test_first_row_counts_particles():
    for fam, vel in ((d2t7_family(), HEX_VELOCITIES), (d2t4_family(), LEFT_VELOCITIES)):
        M = moment_matrix(fam, vel)
        assert np.allclose(M[0], 1.0)


def test_lambda_tensor_first_moment():
    M = moment_matrix(d2t7_family(), HEX_VELOCITIES)
    L = lambda_tensor(M)
    assert L[1, 1, 0] == pytest.approx(0.0, abs=1e-14)
    assert L[1, 1, 3] == pytest.approx(0.5, abs=1e-14)
    assert L[1, 1, 5] == pytest.approx(0.25, abs=1e-14)


def test_singular_velocity_set_is_rejected():
    vel = HEX_VELOCITIES.copy()
    vel[2] = vel[1]
    with pytest.raises(SingularMomentMatrix):
        lambda_tensor(moment_matrix(d2t7_family(), vel))
