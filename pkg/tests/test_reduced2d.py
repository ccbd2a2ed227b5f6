import numpy as np
import pytest

from magshell.errors import DomainError
from magshell.geometry import Midsurface
from magshell.recovery import LimitTriple, limit_energy
from magshell.reduced2d import (Grid2D, MinimizeOptions, ReducedState, energy_gradient,
                                gradient_check, minimize, quadratic_u_oracle, reduced_energy)


@pytest.fixture
def grid(sines):
    return Grid2D(sines, (16, 16))


def noisy(grid, rng, eps=0.1):
    base = ReducedState.from_triple(grid, LimitTriple.smooth())
    lam = base.lam + eps * rng.standard_normal(base.lam.shape)
    lam /= np.linalg.norm(lam, axis=1, keepdims=True)
    return ReducedState(base.u + eps * rng.standard_normal(base.u.shape),
                        base.v + eps * rng.standard_normal(base.v.shape), lam)


def test_difference_operators_exact_on_quadratics(grid):
    x = grid.points.reshape(-1, 2)
    f = x[:, 0] ** 2 + 3 * x[:, 0] * x[:, 1] - x[:, 1] ** 2
    np.testing.assert_allclose(grid.D1 @ f, 2 * x[:, 0] + 3 * x[:, 1], atol=1e-11)
    np.testing.assert_allclose(grid.D2 @ f, 3 * x[:, 0] - 2 * x[:, 1], atol=1e-11)
    np.testing.assert_allclose(grid.D11 @ f, 2.0, atol=1e-9)
    np.testing.assert_allclose(grid.D12 @ f, 3.0, atol=1e-9)
    np.testing.assert_allclose(grid.D22 @ f, -2.0, atol=1e-9)
    assert grid.w.sum() == pytest.approx(1.0)


def test_constant_state_energy(grid, model):
    e = reduced_energy(ReducedState.zeros(grid), grid, model, 1.0)
    assert e["total"] == pytest.approx(0.5)
    assert reduced_energy(ReducedState.zeros(grid, (1, 0, 0)), grid, model)["total"] == 0.0


def test_matches_limit_energy(sines, model):
    g = Grid2D(sines, (48, 48))
    t = LimitTriple.smooth()
    e = reduced_energy(ReducedState.from_triple(g, t), g, model, 0.1)
    ref = limit_energy(t, sines, model, 0.1)
    for key in ("membrane", "bending", "exchange", "magnetostatic", "total"):
        assert e[key] == pytest.approx(ref[key], rel=0.02)


def test_gradient_check(grid, model, rng):
    assert gradient_check(noisy(grid, rng), grid, model, alpha=0.1) <= 1e-4


def test_gradient_matches_coordinate_difference(grid, model, rng):
    s = noisy(grid, rng)
    du, dv, dl = energy_gradient(grid, model, s.u, s.v, s.lam, 0.1)
    eps = 1e-6
    i = 37

    def E(v):
        return reduced_energy(ReducedState(s.u, v, s.lam), grid, model, 0.1)["total"]

    vp, vm = s.v.copy(), s.v.copy()
    vp[i] += eps
    vm[i] -= eps
    assert dv[i] == pytest.approx((E(vp) - E(vm)) / (2 * eps), rel=1e-5)


def test_minimize_decreases(grid, model, rng):
    res = minimize(noisy(grid, rng), grid, model, ("u", "v", "lambda"), 0.1,
                   MinimizeOptions(max_iters=60))
    assert all(b <= a for a, b in zip(res.energies, res.energies[1:]))
    assert res.energies[-1] < res.energies[0]
    np.testing.assert_allclose(np.linalg.norm(res.state.lam, axis=1), 1.0, atol=1e-12)


def test_minimize_over_u_matches_oracle(sines, model, rng):
    g = Grid2D(sines, (10, 10))
    s = noisy(g, rng)
    _, e_star = quadratic_u_oracle(s, g, model, 0.1)
    res = minimize(s, g, model, ("u",), 0.1, MinimizeOptions(max_iters=3000, tol=1e-10))
    assert res.energies[-1] == pytest.approx(e_star, rel=1e-6)
    np.testing.assert_allclose(res.state.v, s.v)


def test_validation(grid, model):
    with pytest.raises(DomainError):
        Grid2D(Midsurface.flat(), (3, 10))
    s = ReducedState.zeros(grid)
    with pytest.raises(DomainError):
        ReducedState(s.u, s.v, 2 * s.lam)
    with pytest.raises(DomainError):
        minimize(s, grid, model, ("w",))
