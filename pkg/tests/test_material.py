import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_rotations, unit_vectors
from magshell.errors import DomainError
from magshell.material import (MaterialModel, TensorCache, density_W, density_W_inc,
                               density_W_k, dist_so3, elastic_matrix, elastic_tensor,
                               fd_elastic_tensor, growth_bound, polar_rotation, q3,
                               q3_nu_gradient, q3k)

finite = st.floats(-2.0, 2.0, allow_nan=False)


def test_value_at_scaled_identity(model):
    assert density_W(model, 2 * np.eye(3), np.array([0.0, 0.0, 1.0])) == pytest.approx(18.0)


def test_normalization_on_rotations(model, rng):
    R = random_rotations(rng, 100)
    nu = unit_vectors(rng, 100)
    assert np.max(np.abs(density_W(model, R, nu))) <= 1e-12


def test_frame_indifference(model, rng):
    F = np.eye(3) + 0.3 * rng.standard_normal((100, 3, 3))
    nu = unit_vectors(rng, 100)
    R = random_rotations(rng, 100)
    RF = R @ F
    Rnu = np.einsum("nij,nj->ni", R, nu)
    np.testing.assert_allclose(density_W(model, RF, Rnu), density_W(model, F, nu), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 3), elements=finite))
def test_polar_rotation_is_closest(M):
    F = np.eye(3) + 0.5 * M
    if np.linalg.det(F) <= 1e-3:
        return
    R = polar_rotation(F)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-10)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-10)
    others = random_rotations(np.random.default_rng(0), 100)
    assert np.linalg.norm(F - R) <= np.min(np.linalg.norm(F - others, axis=(1, 2))) + 1e-12


def test_polar_fallback_for_negative_det():
    F = np.diag([1.0, 1.0, -0.5])
    R = polar_rotation(F)
    assert np.linalg.det(R) == pytest.approx(1.0)
    assert dist_so3(F) == pytest.approx(np.linalg.norm(F - R))


def test_growth_bound(model, rng):
    F = rng.normal(scale=2.0, size=(1000, 3, 3))
    nu = unit_vectors(rng, 1000)
    assert np.all(density_W(model, F, nu) >= growth_bound(model, F) - 1e-12)


def test_incompressible_and_penalized_variants(model, rng):
    nu = np.array([0.0, 1.0, 0.0])
    F = np.diag([1.1, 1.0, 1.0])
    assert density_W_inc(model, F, nu) == np.inf
    R = random_rotations(rng, 1)[0]
    assert density_W_inc(model, R, nu) == pytest.approx(0.0, abs=1e-12)
    assert density_W_k(model, F, nu, k=10) == pytest.approx(density_W(model, F, nu) + 5 * 0.1**2)


def test_tensor_matches_finite_differences(model, rng):
    for nu in unit_vectors(rng, 5):
        C = elastic_tensor(model, nu).entries
        fd = fd_elastic_tensor(model, nu)
        assert np.max(np.abs(C - fd)) / np.max(np.abs(C)) <= 1e-5


def test_q3_vanishes_on_skew(model, rng):
    A = rng.standard_normal((100, 3, 3))
    W = A - np.swapaxes(A, 1, 2)
    assert np.max(np.abs(q3(model, W, unit_vectors(rng, 100)))) <= 1e-8


def test_q3_agrees_with_matrix_form(model, rng):
    G = rng.standard_normal((20, 3, 3))
    nu = unit_vectors(rng, 20)
    C = elastic_matrix(model, nu)
    g = G.reshape(20, 9)
    np.testing.assert_allclose(q3(model, G, nu), np.einsum("ni,nij,nj->n", g, C, g), rtol=1e-12)
    tr = np.trace(G, axis1=1, axis2=2)
    np.testing.assert_allclose(q3k(model, G, nu, 3.0), q3(model, G, nu) + 3.0 * tr**2)


def test_q3_nu_gradient(model, rng):
    G = rng.standard_normal((3, 3))
    nu = unit_vectors(rng, 1)[0]
    eps = 1e-6
    C = lambda n: 2 * np.sum((0.5 * (G + G.T)) ** 2) + 8 * model.coupling * (n @ (0.5 * (G + G.T)) @ n) ** 2
    fd = np.array([(C(nu + eps * e) - C(nu - eps * e)) / (2 * eps) for e in np.eye(3)])
    np.testing.assert_allclose(q3_nu_gradient(model, G, nu), fd, rtol=1e-6)


def test_validation():
    with pytest.raises(DomainError):
        MaterialModel(p=3.0)
    with pytest.raises(DomainError):
        MaterialModel(coupling=-1.0)
    with pytest.raises(DomainError):
        density_W(MaterialModel(), np.eye(3), np.array([1.0, 1.0, 0.0]))


def test_tensor_cache(model):
    cache = TensorCache(model)
    a = cache.get(np.array([0.0, 0.0, 1.0]))
    b = cache.get(np.array([0.0, 0.0, 1.0]))
    assert a is b and len(cache) == 1
