import numpy as np
import pytest

from conftest import random_rotations
from magshell.energy3d import (State3D, admissibility, displacements, elastic_energy,
                               exchange_energy, magnetostatic_energy, scaled_gradient,
                               shell_state, strain, total_energy, trapezoid_weights)
from magshell.errors import DomainError
from magshell.geometry import Midsurface, ShellFrame
from test_maxwell import prism_nz


def test_trapezoid_weights_integrate_volume(sines):
    f = ShellFrame(sines, 0.1, (9, 11, 5))
    assert trapezoid_weights(f).sum() == pytest.approx(1.0)


def test_scaled_gradient_exact_on_quadratics():
    f = ShellFrame(Midsurface.flat(), 0.2, (7, 8, 5))
    x = f.points()
    y = np.stack([x[..., 0] ** 2, x[..., 0] * x[..., 1], x[..., 2] ** 2], -1)
    G = scaled_gradient(y, f)
    np.testing.assert_allclose(G[..., 0, 0], 2 * x[..., 0], atol=1e-12)
    np.testing.assert_allclose(G[..., 1, 1], x[..., 0], atol=1e-12)
    np.testing.assert_allclose(G[..., 2, 2], 2 * x[..., 2] / 0.2, atol=1e-12)


def test_undeformed_shell_has_zero_elastic_energy(model, sines):
    f = ShellFrame(sines, 0.1, (9, 9, 5))
    s = shell_state(f)
    F, _ = strain(s, f)
    np.testing.assert_allclose(F, np.broadcast_to(np.eye(3), F.shape), atol=1e-12)
    assert elastic_energy(s, f, model) == pytest.approx(0.0, abs=1e-12)
    assert exchange_energy(s, f, 1.0) == pytest.approx(0.0, abs=1e-12)
    U, V = displacements(s, f)
    np.testing.assert_allclose(U, 0.0, atol=1e-10)


def test_rigid_motion_costs_nothing(model, rng):
    f = ShellFrame(Midsurface.flat(), 0.1, (9, 9, 5))
    R = random_rotations(rng, 1)[0]
    x = f.points()
    y = np.stack([x[..., 0], x[..., 1], f.h * x[..., 2]], -1) @ R.T + 3.0
    nu = np.broadcast_to(R @ np.array([0.0, 0.6, 0.8]), y.shape).copy()
    s = State3D(y, nu, f.h)
    assert elastic_energy(s, f, model) <= 1e-6


def test_compressive_state_is_infinite(model):
    f = ShellFrame(Midsurface.flat(), 0.1, (9, 9, 5))
    x = f.points()
    y = np.stack([1.1 * x[..., 0], x[..., 1], f.h * x[..., 2]], -1)
    nu = np.zeros_like(y)
    nu[..., 2] = 1.0
    s = State3D(y, nu, f.h)
    assert elastic_energy(s, f, model) == np.inf
    pen = elastic_energy(s, f, model, penalized=True)
    assert np.isfinite(pen) and pen > 0
    assert total_energy(s, f, model, alpha=0.0).elastic_penalized == pytest.approx(pen)


def test_exchange_of_planar_twist():
    f = ShellFrame(Midsurface.flat(), 0.1, (129, 5, 3))
    s = shell_state(f)
    k = 2.0
    x1 = f.points()[..., 0]
    nu = np.stack([np.cos(k * x1), np.sin(k * x1), np.zeros_like(x1)], -1)
    s = State3D(s.y, nu, f.h, grad=s.grad)
    assert exchange_energy(s, f, 0.5) == pytest.approx(0.5 * k * k, rel=1e-3)


def test_flat_plate_magnetostatics():
    h = 0.1
    f = ShellFrame(Midsurface.flat(), h, (33, 33, 3))
    s = shell_state(f)
    e = magnetostatic_energy(s, f)
    assert e == pytest.approx(0.5 * prism_nz(0.5, 0.5, h / 2), rel=0.05)


def test_folded_state_is_not_admissible():
    f = ShellFrame(Midsurface.flat(), 0.1, (9, 9, 3))
    x = f.points()
    y = np.stack([np.abs(x[..., 0] - 0.5), x[..., 1], f.h * x[..., 2]], -1)
    nu = np.zeros_like(y)
    nu[..., 2] = 1.0
    det_ok, inj_ok = admissibility(State3D(y, nu, f.h), f)
    assert not det_ok and not inj_ok
    assert admissibility(shell_state(f), f) == (True, True)


def test_validation(model):
    f = ShellFrame(Midsurface.flat(), 0.1, (5, 5, 3))
    s = shell_state(f)
    with pytest.raises(DomainError):
        State3D(s.y, 2 * s.nu, f.h)
    with pytest.raises(DomainError):
        elastic_energy(State3D(s.y, s.nu, f.h, beta=8.0), f, model)
    with pytest.raises(DomainError):
        exchange_energy(s, f, -1.0)


def test_exchange_quadrature_self_convergence():
    k, vals = 2.0, []
    for n in (17, 33, 65):
        f = ShellFrame(Midsurface.flat(), 0.1, (n, 5, 3))
        s = shell_state(f)
        x1 = f.points()[..., 0]
        nu = np.stack([np.cos(k * x1), np.sin(k * x1), np.zeros_like(x1)], -1)
        vals.append(exchange_energy(State3D(s.y, nu, f.h, grad=s.grad), f, 1.0))
    d = np.abs(np.diff(vals))
    assert np.log2(d[0] / d[1]) >= 1.5


def test_folding_map_is_not_injective():
    f = ShellFrame(Midsurface.flat(), 0.1, (9, 9, 5))
    x = f.points()
    y = np.stack([x[..., 0], x[..., 1], f.h * np.abs(x[..., 2])], -1)
    nu = np.zeros_like(y)
    nu[..., 2] = 1.0
    assert admissibility(State3D(y, nu, f.h), f)[1] is False


def test_displacement_shift(sines):
    f = ShellFrame(sines, 0.1, (9, 9, 5))
    s = shell_state(f)
    shifted = State3D(s.y + np.array([0.3, -0.2, 0.0]), s.nu, f.h)
    U0, V0 = displacements(s, f)
    U1, V1 = displacements(shifted, f)
    g = f.h ** 4.5
    np.testing.assert_allclose(U1 - U0, np.broadcast_to([0.3 / g, -0.2 / g], U0.shape), rtol=1e-10)
    np.testing.assert_allclose(V1, V0, atol=1e-9)
