import numpy as np
import pytest

from magshell.errors import DomainError, NonInvertibleError
from magshell.geometry import (Midsurface, ShellFrame, detect_h0, expansion_residuals,
                               jacobian, metric_factors, normal, normal_derivatives, shell_map,
                               skew_matrix)
from magshell.rates import fit_rate


def test_shell_map_linear_profile():
    f = ShellFrame(Midsurface.linear(1.0), 0.1)
    y = shell_map(f, np.array([0.5, 0.5, 0.5]))
    n = np.array([-0.1, 0.0, 1.0]) / np.sqrt(1.01)
    np.testing.assert_allclose(y, np.array([0.5, 0.5, 0.05]) + 0.05 * n, atol=1e-15)


def test_flat_chart_is_scaling():
    f = ShellFrame(Midsurface.flat(), 0.3)
    x = f.points()
    y = shell_map(f, x)
    np.testing.assert_allclose(y[..., :2], x[..., :2])
    np.testing.assert_allclose(y[..., 2], 0.3 * x[..., 2])
    M, kappa = metric_factors(f, x)
    np.testing.assert_allclose(M, np.broadcast_to(np.eye(3), M.shape), atol=1e-15)
    np.testing.assert_allclose(kappa, 1.0)


def test_normal_matches_cross_product(sines):
    h = 0.2
    xp = np.random.default_rng(0).uniform(0, 1, (50, 2))
    g = sines.grad_theta(xp[:, 0], xp[:, 1])
    t1 = np.stack([np.ones(50), np.zeros(50), h * g[:, 0]], -1)
    t2 = np.stack([np.zeros(50), np.ones(50), h * g[:, 1]], -1)
    c = np.cross(t1, t2)
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    np.testing.assert_allclose(normal(sines, xp, h), c, atol=1e-14)


def test_normal_derivatives_finite_difference(sines):
    h, eps = 0.3, 1e-6
    xp = np.array([[0.3, 0.7], [0.6, 0.2]])
    _, d1, d2 = normal_derivatives(sines, xp, h)
    for j, d in enumerate((d1, d2)):
        e = np.zeros(2)
        e[j] = eps
        fd = (normal(sines, xp + e, h) - normal(sines, xp - e, h)) / (2 * eps)
        np.testing.assert_allclose(d, fd, atol=1e-8)


def test_jacobian_finite_difference(sines):
    f = ShellFrame(sines, 0.2)
    x = np.array([[0.3, 0.4, 0.25], [0.8, 0.1, -0.4]])
    J = jacobian(f, x)
    eps = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = eps
        fd = (shell_map(f, x + e) - shell_map(f, x - e)) / (2 * eps)
        if j == 2:
            fd /= f.h
        np.testing.assert_allclose(J[..., :, j], fd, atol=1e-8)


def test_skew_matrix_is_skew(sines):
    A = skew_matrix(sines, np.array([[0.2, 0.9]]))
    np.testing.assert_allclose(A, -np.swapaxes(A, -1, -2))


@pytest.mark.parametrize("mid", [Midsurface.sines(0.5), Midsurface.bump(0.5), Midsurface.linear(0.7, 0.2)])
def test_expansion_slopes(mid):
    rows = [(h, expansion_residuals(ShellFrame(mid, h))) for h in (0.2, 0.1, 0.05, 0.025)]
    for key in ("jacobian", "kappa", "inverse"):
        vals = [(h, r[key]) for h, r in rows]
        if max(v for _, v in vals) < 1e-14:
            continue
        assert fit_rate(vals).slope >= 1.8


def test_from_samples_recovers_profile(sines):
    x1 = np.linspace(0, 1, 41)
    x2 = np.linspace(0, 1, 41)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    mid = Midsurface.from_samples(x1, x2, sines.theta(X1, X2))
    pts = np.array([0.37, 0.61])
    assert abs(mid.theta(*pts) - sines.theta(*pts)) < 1e-5
    np.testing.assert_allclose(mid.grad_theta(*pts), sines.grad_theta(*pts), atol=1e-3)


def test_domain_errors(sines):
    f = ShellFrame(sines, 0.1)
    with pytest.raises(DomainError):
        shell_map(f, np.array([1.5, 0.5, 0.0]))
    with pytest.raises(DomainError):
        shell_map(f, np.array([0.5, 0.5, 0.7]))
    with pytest.raises(DomainError):
        ShellFrame(sines, 0.0)
    with pytest.raises(DomainError):
        Midsurface.from_profile("saddle")


def test_large_h_not_invertible():
    mid = Midsurface.sines(5.0)
    with pytest.raises(NonInvertibleError):
        jacobian(ShellFrame(mid, 1.0), ShellFrame(mid, 1.0).points())


def test_detect_h0():
    mid = Midsurface.sines(0.5)
    assert detect_h0(mid, 0.2) == 0.2
    h0 = detect_h0(mid, 5.0)
    assert h0 < 5.0
    x = ShellFrame(mid, h0).points()
    _, kappa = metric_factors(ShellFrame(mid, h0), x)
    assert kappa.min() > 0.5
