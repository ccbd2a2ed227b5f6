"""Recovery sequence for a limit triple (u, v, lambda).

With gamma = h^(beta/2) the ansatz is

    ybar(x', s) = Theta_h(x', h s) + gamma (u, 0) + (gamma/h) (0, 0, v)
                  - gamma s (grad v, 0) + 2 gamma h s atil + gamma h s^2 b,

with atil = a - (0, 0, grad v . grad theta / 2).  This is the scaling for
which nabla_h ybar M_h = Id + skew + gamma (membrane - s bending + 2 (a + s b)
(x) e3) + O(gamma h); the trace conditions on a3 and b3 then make
det(nabla_h ybar M_h) = 1 + O(gamma h).

Incompressibility is restored exactly by reparametrizing the thickness:
y(x', x3) = ybar(x', eta(x', x3)) with

    d eta / d x3 = kappa_h(x', x3) / det(nabla_h ybar)(x', eta),   eta(x', 0) = 0,

which gives det(nabla_h y M_h) = 1 at every node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from magshell.energy3d import State3D
from magshell.errors import DomainError, IntegrationError
from magshell.geometry import Midsurface, ShellFrame, metric_factors, normal_derivatives
from magshell.material import MaterialModel
from magshell.qforms import incompressible_operators, q2_incompressible

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LimitTriple:
    """(u, v, lambda) with their derivatives as callables of (x1, x2).

    Shapes: u (..., 2), grad_u (..., 2, 2) with [i, j] = d_j u_i, v (...),
    grad_v (..., 2), hess_v (..., 2, 2), lam (..., 3), grad_lam (..., 3, 2).
    """

    u: Field
    grad_u: Field
    v: Field
    grad_v: Field
    hess_v: Field
    lam: Field
    grad_lam: Field
    name: str = "custom"

    def sample(self, xp):
        x1, x2 = xp[..., 0], xp[..., 1]
        out = {k: np.asarray(getattr(self, k)(x1, x2), float)
               for k in ("u", "grad_u", "v", "grad_v", "hess_v", "lam", "grad_lam")}
        if np.any(np.abs(np.linalg.norm(out["lam"], axis=-1) - 1.0) > 1e-10):
            raise DomainError("lambda must be unit length")
        return out

    @classmethod
    def constant(cls, lam=(0.0, 0.0, 1.0), name="constant"):
        lam = np.asarray(lam, float)
        lam = lam / np.linalg.norm(lam)

        def zeros(*tail):
            return lambda x1, x2: np.zeros(np.broadcast(x1, x2).shape + tail)

        return cls(zeros(2), zeros(2, 2), zeros(), zeros(2), zeros(2, 2),
                   lambda x1, x2: np.broadcast_to(lam, np.broadcast(x1, x2).shape + (3,)).copy(),
                   zeros(3, 2), name)

    @classmethod
    def smooth(cls, amp_u=0.1, amp_v=0.2, tilt=0.2, twist=(0.5, 0.3), lx=1.0, ly=1.0):
        """Trigonometric u, v and a slowly rotating lambda with a small normal component."""
        k1, k2 = np.pi / lx, np.pi / ly
        w1, w2 = twist

        def u(x1, x2):
            return amp_u * np.stack([np.sin(k1 * x1) * np.cos(k2 * x2),
                                     np.cos(k1 * x1) * np.sin(k2 * x2)], axis=-1)

        def grad_u(x1, x2):
            s1, c1, s2, c2 = np.sin(k1 * x1), np.cos(k1 * x1), np.sin(k2 * x2), np.cos(k2 * x2)
            g = np.empty(np.broadcast(x1, x2).shape + (2, 2))
            g[..., 0, 0] = k1 * c1 * c2
            g[..., 0, 1] = -k2 * s1 * s2
            g[..., 1, 0] = -k1 * s1 * s2
            g[..., 1, 1] = k2 * c1 * c2
            return amp_u * g

        def v(x1, x2):
            return amp_v * np.sin(k1 * x1) * np.sin(k2 * x2)

        def grad_v(x1, x2):
            return amp_v * np.stack([k1 * np.cos(k1 * x1) * np.sin(k2 * x2),
                                     k2 * np.sin(k1 * x1) * np.cos(k2 * x2)], axis=-1)

        def hess_v(x1, x2):
            s1, c1, s2, c2 = np.sin(k1 * x1), np.cos(k1 * x1), np.sin(k2 * x2), np.cos(k2 * x2)
            H = np.empty(np.broadcast(x1, x2).shape + (2, 2))
            H[..., 0, 0] = -k1 * k1 * s1 * s2
            H[..., 1, 1] = -k2 * k2 * s1 * s2
            H[..., 0, 1] = H[..., 1, 0] = k1 * k2 * c1 * c2
            return amp_v * H

        r = np.sqrt(1.0 + tilt * tilt)

        def lam(x1, x2):
            phi = w1 * x1 + w2 * x2
            return np.stack([np.cos(phi), np.sin(phi), np.full(np.shape(phi), tilt)], axis=-1) / r

        def grad_lam(x1, x2):
            phi = w1 * x1 + w2 * x2
            d = np.stack([-np.sin(phi), np.cos(phi), np.zeros(np.shape(phi))], axis=-1) / r
            return np.stack([w1 * d, w2 * d], axis=-1)

        return cls(u, grad_u, v, grad_v, hess_v, lam, grad_lam, "smooth")

    @classmethod
    def from_profile(cls, name, lx=1.0, ly=1.0):
        if name == "zero-e3":
            return cls.constant((0.0, 0.0, 1.0), name)
        if name == "zero-e1":
            return cls.constant((1.0, 0.0, 0.0), name)
        if name == "smooth":
            return cls.smooth(lx=lx, ly=ly)
        raise DomainError(f"unknown recovery profile {name!r}")


@dataclass(frozen=True)
class CorrectorFields:
    a: np.ndarray
    b: np.ndarray


def _membrane(s, g):
    Hm = s["grad_u"] + s["grad_v"][..., :, None] * g[..., None, :]
    return 0.5 * (Hm + np.swapaxes(Hm, -1, -2))


def build_correctors(triple: LimitTriple, mid: Midsurface, model: MaterialModel, xp):
    """Trace-compatible a, b whose in-plane parts are the Q2^inc argmins."""
    s = triple.sample(xp)
    g = mid.grad_theta(xp[..., 0], xp[..., 1])
    _, K = incompressible_operators(model, s["lam"])
    shape = xp.shape[:-1]
    a = np.einsum("...ia,...a->...i", K, _membrane(s, g).reshape(shape + (4,)))
    b = np.einsum("...ia,...a->...i", K, (-s["hess_v"]).reshape(shape + (4,)))
    # exact trace identities (the operator already enforces them up to rounding)
    a[..., 2] = -0.5 * (s["grad_u"][..., 0, 0] + s["grad_u"][..., 1, 1]
                        + np.sum(s["grad_v"] * g, axis=-1))
    b[..., 2] = 0.5 * (s["hess_v"][..., 0, 0] + s["hess_v"][..., 1, 1])
    return CorrectorFields(a, b)


def limit_energy(triple: LimitTriple, mid: Midsurface, model: MaterialModel, alpha=1.0, n=257):
    """E(u, v, lambda) by the trapezoid rule on an n x n grid with exact derivatives."""
    x1 = np.linspace(0.0, mid.lx, n)
    x2 = np.linspace(0.0, mid.ly, n)
    xp = np.stack(np.meshgrid(x1, x2, indexing="ij"), axis=-1)
    s = triple.sample(xp)
    g = mid.grad_theta(xp[..., 0], xp[..., 1])
    w1 = np.full(n, x1[1] - x1[0])
    w2 = np.full(n, x2[1] - x2[0])
    w1[[0, -1]] *= 0.5
    w2[[0, -1]] *= 0.5
    w = w1[:, None] * w2[None, :]
    membrane = 0.5 * np.sum(w * q2_incompressible(model, _membrane(s, g), s["lam"])[0])
    bending = np.sum(w * q2_incompressible(model, -s["hess_v"], s["lam"])[0]) / 24.0
    exchange = alpha * np.sum(w * np.sum(s["grad_lam"] ** 2, axis=(-2, -1)))
    mag = 0.5 * np.sum(w * s["lam"][..., 2] ** 2)
    return {"membrane": float(membrane), "bending": float(bending),
            "exchange": float(exchange), "magnetostatic": float(mag),
            "total": float(membrane + bending + exchange + mag)}


class Ansatz:
    """ybar and its exact scaled gradient at arbitrary thickness coordinates s."""

    def __init__(self, triple: LimitTriple, frame: ShellFrame, model: MaterialModel, beta=9.0):
        self.frame = frame
        self.h = h = frame.h
        self.gamma = h ** (beta / 2)
        mid = frame.midsurface
        xp = frame.plane_points()
        self.xp = xp
        s = triple.sample(xp)
        self.fields = s
        self.grad_theta = g = mid.grad_theta(xp[..., 0], xp[..., 1])
        self.theta = mid.theta(xp[..., 0], xp[..., 1])
        self.n, d1n, d2n = normal_derivatives(mid, xp, h)
        self.dn = (d1n, d2n)
        self.correctors = cor = build_correctors(triple, mid, model, xp)
        self.atil = cor.a.copy()
        self.atil[..., 2] -= 0.5 * np.sum(s["grad_v"] * g, axis=-1)
        d1, d2 = frame.spacing[:2]
        self.d_atil = [np.gradient(self.atil, d, axis=ax, edge_order=2)
                       for ax, d in ((0, d1), (1, d2))]
        self.d_b = [np.gradient(cor.b, d, axis=ax, edge_order=2)
                    for ax, d in ((0, d1), (1, d2))]

    def _expand(self, f, s):
        # broadcast an (n1, n2, ...) field against s of shape (n1, n2, m)
        return f[:, :, None]

    def value(self, s):
        h, gm = self.h, self.gamma
        e = self._expand
        f = self.fields
        S = s[..., None]
        y = h * S * e(self.n, s)
        y[..., 0] += self.xp[:, :, None, 0]
        y[..., 1] += self.xp[:, :, None, 1]
        y[..., 2] += h * self.theta[:, :, None] + (gm / h) * f["v"][:, :, None]
        y[..., :2] += gm * (e(f["u"], s) - S * e(f["grad_v"], s))
        y += 2 * gm * h * S * e(self.atil, s) + gm * h * S**2 * e(self.correctors.b, s)
        return y

    def gradient(self, s):
        """nabla_h ybar at (x', s); [..., i, j] = d_j ybar_i (third column / h)."""
        h, gm = self.h, self.gamma
        e = self._expand
        f = self.fields
        S = s[..., None]
        G = np.zeros(s.shape + (3, 3))
        for j in range(2):
            col = h * S * e(self.dn[j], s)
            col[..., j] += 1.0
            col[..., 2] += h * self.grad_theta[:, :, None, j] + (gm / h) * f["grad_v"][:, :, None, j]
            col[..., :2] += gm * (e(f["grad_u"][..., :, j], s) - S * e(f["hess_v"][..., :, j], s))
            col += 2 * gm * h * S * e(self.d_atil[j], s) + gm * h * S**2 * e(self.d_b[j], s)
            G[..., :, j] = col
        col = np.broadcast_to(e(self.n, s), s.shape + (3,)).copy()
        col[..., :2] -= (gm / h) * e(f["grad_v"], s)
        col += 2 * gm * (e(self.atil, s) + S * e(self.correctors.b, s))
        G[..., :, 2] = col
        return G

    def det(self, s):
        return np.linalg.det(self.gradient(s))


def _rk4(rhs, x0, x1, eta0, steps):
    eta = eta0
    dt = (x1 - x0) / steps
    t = x0
    for _ in range(steps):
        k1 = rhs(t, eta)
        k2 = rhs(t + dt / 2, eta + dt / 2 * k1)
        k3 = rhs(t + dt / 2, eta + dt / 2 * k2)
        k4 = rhs(t + dt, eta + dt * k3)
        eta = eta + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return eta


def incompressibility_eta(phi, x3_nodes, shape=(), tol=1e-12, max_steps=4096):
    """Solve d eta/d x3 = phi(x3, eta), eta(0) = 0, at the given x3 nodes.

    ``phi`` acts on arrays of ``shape`` (one value per column x').  Classical
    RK4 from 0 outwards; between consecutive nodes the number of substeps is
    doubled until two successive results agree within ``tol``.
    """
    x3_nodes = np.asarray(x3_nodes, float)

    def rhs(t, eta):
        val = phi(t, eta)
        if np.any(~np.isfinite(val)) or np.any(val < 0.5) or np.any(val > 2.0):
            raise DomainError("incompressibility factor left [1/2, 2]; thickness too large")
        return val

    out = np.empty(shape + (len(x3_nodes),))
    zero = np.zeros(shape)
    for sign in (1.0, -1.0):
        idx = [i for i in np.argsort(sign * x3_nodes) if sign * x3_nodes[i] >= 0]
        if sign < 0:
            idx = [i for i in idx if x3_nodes[i] != 0.0]
        t, eta = 0.0, zero
        for i in idx:
            target = x3_nodes[i]
            if target == t:
                out[..., i] = eta
                continue
            steps = 1
            prev = _rk4(rhs, t, target, eta, steps)
            while True:
                steps *= 2
                if steps > max_steps:
                    raise IntegrationError("step control failed for the thickness ODE")
                cur = _rk4(rhs, t, target, eta, steps)
                if np.max(np.abs(cur - prev)) <= tol:
                    break
                prev = cur
            t, eta = target, cur
            out[..., i] = eta
    return out


@dataclass(frozen=True)
class RecoveryState:
    state: State3D
    eta: np.ndarray
    d3_eta: np.ndarray
    ansatz: Ansatz


def build_recovery_state(triple: LimitTriple, frame: ShellFrame, model: MaterialModel,
                         beta=9.0, tol=1e-12) -> RecoveryState:
    if not beta > 2 * model.p:
        raise DomainError(f"beta={beta} must exceed 2p={2 * model.p}")
    ans = Ansatz(triple, frame, model, beta)
    x = frame.points()
    _, kappa = metric_factors(frame, x)
    M, _ = metric_factors(frame, x)
    x3 = frame.x3
    n1, n2 = frame.grid[:2]

    def phi(t, eta):
        xt = np.concatenate([ans.xp, np.full((n1, n2, 1), t)], axis=-1)
        _, k_t = metric_factors(frame, xt)
        return k_t / ans.det(eta[..., None])[..., 0]

    eta = incompressibility_eta(phi, x3, (n1, n2), tol)
    Jbar = ans.gradient(eta)
    d3 = kappa / np.linalg.det(Jbar)
    d1, d2 = frame.spacing[:2]
    Dphi = np.zeros(eta.shape + (3, 3))
    Dphi[..., 0, 0] = Dphi[..., 1, 1] = 1.0
    Dphi[..., 2, 0] = frame.h * np.gradient(eta, d1, axis=0, edge_order=2)
    Dphi[..., 2, 1] = frame.h * np.gradient(eta, d2, axis=1, edge_order=2)
    Dphi[..., 2, 2] = d3
    grad = Jbar @ Dphi
    y = ans.value(eta)
    nu = np.broadcast_to(ans.fields["lam"][:, :, None, :], y.shape).copy()
    state = State3D(y, nu, frame.h, beta, grad=grad)
    return RecoveryState(state, eta, d3, ans)
