"""Shallow-shell chart over a rectangle.

The reference body of thickness h is the image of the unit plate
Omega = omega x (-1/2, 1/2) under

    x -> (x', h theta(x')) + h x3 n_h(x'),

where n_h is the upward unit normal of the graph of h*theta.  Everything
here is evaluated pointwise from analytic derivatives of theta; nothing is
cached on the 3D grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RectBivariateSpline

from magshell.errors import DomainError, NonInvertibleError

ScalarFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class Midsurface:
    """Profile theta on omega = (0, lx) x (0, ly) with first and second derivatives.

    ``theta(x1, x2)`` returns an array shaped like ``x1``; ``grad_theta``
    appends a trailing axis of length 2 and ``hess_theta`` two axes (2, 2).
    """

    lx: float
    ly: float
    theta: ScalarFn
    grad_theta: ScalarFn
    hess_theta: ScalarFn
    name: str = "custom"

    @classmethod
    def flat(cls, lx=1.0, ly=1.0):
        def theta(x1, x2):
            return np.zeros(np.broadcast(x1, x2).shape)

        def grad(x1, x2):
            return np.zeros(np.broadcast(x1, x2).shape + (2,))

        def hess(x1, x2):
            return np.zeros(np.broadcast(x1, x2).shape + (2, 2))

        return cls(lx, ly, theta, grad, hess, name="flat")

    @classmethod
    def linear(cls, c1, c2=0.0, lx=1.0, ly=1.0):
        def theta(x1, x2):
            return c1 * np.asarray(x1, float) + c2 * np.asarray(x2, float)

        def grad(x1, x2):
            shape = np.broadcast(x1, x2).shape
            out = np.empty(shape + (2,))
            out[..., 0] = c1
            out[..., 1] = c2
            return out

        def hess(x1, x2):
            return np.zeros(np.broadcast(x1, x2).shape + (2, 2))

        return cls(lx, ly, theta, grad, hess, name="linear")

    @classmethod
    def sines(cls, amplitude=0.5, lx=1.0, ly=1.0):
        """amplitude * sin(pi x1 / lx) * sin(pi x2 / ly)."""
        k1, k2 = np.pi / lx, np.pi / ly

        def theta(x1, x2):
            return amplitude * np.sin(k1 * x1) * np.sin(k2 * x2)

        def grad(x1, x2):
            x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
            s1, c1 = np.sin(k1 * x1), np.cos(k1 * x1)
            s2, c2 = np.sin(k2 * x2), np.cos(k2 * x2)
            return amplitude * np.stack([k1 * c1 * s2, k2 * s1 * c2], axis=-1)

        def hess(x1, x2):
            x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
            s1, c1 = np.sin(k1 * x1), np.cos(k1 * x1)
            s2, c2 = np.sin(k2 * x2), np.cos(k2 * x2)
            out = np.empty(x1.shape + (2, 2))
            out[..., 0, 0] = -k1 * k1 * s1 * s2
            out[..., 1, 1] = -k2 * k2 * s1 * s2
            out[..., 0, 1] = out[..., 1, 0] = k1 * k2 * c1 * c2
            return amplitude * out

        return cls(lx, ly, theta, grad, hess, name="sines")

    @classmethod
    def bump(cls, amplitude=0.5, lx=1.0, ly=1.0, width=None):
        """Gaussian bump centred in omega."""
        sigma = 0.2 * min(lx, ly) if width is None else width
        cx, cy = 0.5 * lx, 0.5 * ly

        def _g(x1, x2):
            return amplitude * np.exp(-((x1 - cx) ** 2 + (x2 - cy) ** 2) / (2 * sigma**2))

        def theta(x1, x2):
            return _g(np.asarray(x1, float), np.asarray(x2, float))

        def grad(x1, x2):
            x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
            g = _g(x1, x2)
            return np.stack([-(x1 - cx) / sigma**2 * g, -(x2 - cy) / sigma**2 * g], axis=-1)

        def hess(x1, x2):
            x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
            g = _g(x1, x2)
            d1, d2 = (x1 - cx) / sigma**2, (x2 - cy) / sigma**2
            out = np.empty(x1.shape + (2, 2))
            out[..., 0, 0] = (d1 * d1 - 1 / sigma**2) * g
            out[..., 1, 1] = (d2 * d2 - 1 / sigma**2) * g
            out[..., 0, 1] = out[..., 1, 0] = d1 * d2 * g
            return out

        return cls(lx, ly, theta, grad, hess, name="bump")

    @classmethod
    def from_samples(cls, x1, x2, values):
        """Profile known only on a tensor grid.

        Derivatives come from second-order finite differences on the grid and
        are interpolated with bicubic splines between nodes.
        """
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        values = np.asarray(values, float)
        d1, d2 = np.gradient(values, x1, x2, edge_order=2)
        d11, d12 = np.gradient(d1, x1, x2, edge_order=2)
        d21, d22 = np.gradient(d2, x1, x2, edge_order=2)
        splines = {
            name: RectBivariateSpline(x1, x2, arr, kx=3, ky=3)
            for name, arr in [("t", values), ("1", d1), ("2", d2),
                              ("11", d11), ("12", 0.5 * (d12 + d21)), ("22", d22)]
        }

        def ev(name, a, b):
            a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
            return splines[name].ev(a.ravel(), b.ravel()).reshape(a.shape)

        def theta(a, b):
            return ev("t", a, b)

        def grad(a, b):
            return np.stack([ev("1", a, b), ev("2", a, b)], axis=-1)

        def hess(a, b):
            h12 = ev("12", a, b)
            return np.stack([np.stack([ev("11", a, b), h12], -1),
                             np.stack([h12, ev("22", a, b)], -1)], -2)

        return cls(float(x1[-1] - x1[0]), float(x2[-1] - x2[0]), theta, grad, hess,
                   name="sampled")

    @classmethod
    def from_profile(cls, profile, amplitude=0.5, lx=1.0, ly=1.0):
        if profile == "flat":
            return cls.flat(lx, ly)
        if profile == "linear":
            return cls.linear(amplitude, 0.0, lx, ly)
        if profile == "sines":
            return cls.sines(amplitude, lx, ly)
        if profile == "bump":
            return cls.bump(amplitude, lx, ly)
        raise DomainError(f"unknown theta profile {profile!r}")


@dataclass(frozen=True)
class ShellFrame:
    midsurface: Midsurface
    h: float
    grid: tuple[int, int, int] = (17, 17, 9)
    _nodes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.h > 0:
            raise DomainError(f"thickness must be positive, got {self.h}")
        if min(self.grid) < 2:
            raise DomainError(f"grid needs at least 2 nodes per axis, got {self.grid}")
        n1, n2, n3 = self.grid
        nodes = (np.linspace(0.0, self.midsurface.lx, n1),
                 np.linspace(0.0, self.midsurface.ly, n2),
                 np.linspace(-0.5, 0.5, n3))
        object.__setattr__(self, "_nodes", nodes)

    @property
    def x1(self):
        return self._nodes[0]

    @property
    def x2(self):
        return self._nodes[1]

    @property
    def x3(self):
        return self._nodes[2]

    @property
    def spacing(self):
        return tuple(float(a[1] - a[0]) for a in self._nodes)

    def with_h(self, h):
        return ShellFrame(self.midsurface, h, self.grid)

    def plane_points(self):
        """(n1, n2, 2) array of the in-plane nodes."""
        a, b = np.meshgrid(self.x1, self.x2, indexing="ij")
        return np.stack([a, b], axis=-1)

    def points(self):
        """(n1, n2, n3, 3) array of the nodes of Omega."""
        a, b, c = np.meshgrid(self.x1, self.x2, self.x3, indexing="ij")
        return np.stack([a, b, c], axis=-1)


def _check_in_omega(mid, xp):
    x1, x2 = xp[..., 0], xp[..., 1]
    bad = ((x1 < -_DOMAIN_TOL) | (x1 > mid.lx + _DOMAIN_TOL)
           | (x2 < -_DOMAIN_TOL) | (x2 > mid.ly + _DOMAIN_TOL))
    if np.any(bad):
        raise DomainError("point outside the closure of omega")


def _check_in_plate(frame, x):
    x = np.asarray(x, float)
    if x.shape[-1] != 3:
        raise DomainError("points of Omega need three coordinates")
    _check_in_omega(frame.midsurface, x)
    if np.any(np.abs(x[..., 2]) > 0.5 + _DOMAIN_TOL):
        raise DomainError("x3 outside [-1/2, 1/2]")
    return x


def skew_matrix(mid: Midsurface, xp) -> np.ndarray:
    """First-order correction A(x') with rows (0,0,d1), (0,0,d2), (-d1,-d2,0)."""
    g = mid.grad_theta(xp[..., 0], xp[..., 1])
    A = np.zeros(g.shape[:-1] + (3, 3))
    A[..., 0, 2] = g[..., 0]
    A[..., 1, 2] = g[..., 1]
    A[..., 2, 0] = -g[..., 0]
    A[..., 2, 1] = -g[..., 1]
    return A


def normal(mid: Midsurface, xp, h) -> np.ndarray:
    """Upward unit normal of the graph of h*theta at x'."""
    xp = np.asarray(xp, float)
    _check_in_omega(mid, xp)
    g = mid.grad_theta(xp[..., 0], xp[..., 1])
    n = np.concatenate([-h * g, np.ones(g.shape[:-1] + (1,))], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def normal_derivatives(mid: Midsurface, xp, h):
    """(n_h, d1 n_h, d2 n_h), each with a trailing axis of length 3."""
    g = mid.grad_theta(xp[..., 0], xp[..., 1])
    H = mid.hess_theta(xp[..., 0], xp[..., 1])
    s = np.sqrt(1.0 + h * h * np.sum(g * g, axis=-1))[..., None]
    n = np.concatenate([-h * g, np.ones(g.shape[:-1] + (1,))], axis=-1) / s
    dn = []
    for j in range(2):
        ds = h * h * np.sum(g * H[..., :, j], axis=-1)[..., None] / s
        top = np.concatenate([-h * H[..., :, j], np.zeros(g.shape[:-1] + (1,))], axis=-1) / s
        dn.append(top - n * ds / s)
    return n, dn[0], dn[1]


def shell_map(frame: ShellFrame, x) -> np.ndarray:
    x = _check_in_plate(frame, x)
    mid, h = frame.midsurface, frame.h
    xp = x[..., :2]
    n = normal(mid, xp, h)
    base = np.concatenate([xp, h * mid.theta(xp[..., 0], xp[..., 1])[..., None]], axis=-1)
    return base + h * x[..., 2:3] * n


def _jacobian_unchecked(mid, h, x):
    xp = x[..., :2]
    g = mid.grad_theta(xp[..., 0], xp[..., 1])
    n, d1n, d2n = normal_derivatives(mid, xp, h)
    J = np.zeros(x.shape[:-1] + (3, 3))
    hx3 = (h * x[..., 2])[..., None]
    for j, dn in enumerate((d1n, d2n)):
        col = hx3 * dn
        col[..., j] += 1.0
        col[..., 2] += h * g[..., j]
        J[..., :, j] = col
    J[..., :, 2] = n
    return J


def jacobian(frame: ShellFrame, x) -> np.ndarray:
    """Gradient of the shell chart (in physical coordinates) at z_h(x)."""
    x = _check_in_plate(frame, x)
    J = _jacobian_unchecked(frame.midsurface, frame.h, x)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise NonInvertibleError(
            f"shell chart not invertible at h={frame.h}: min det {det.min():.3e}")
    return J


def metric_factors(frame: ShellFrame, x):
    """Inverse Jacobian M_h and volume factor kappa_h at the nodes x."""
    J = jacobian(frame, x)
    return np.linalg.inv(J), np.abs(np.linalg.det(J))


def expansion_residuals(frame: ShellFrame, x=None):
    """Sup-norm remainders of the first-order expansions of the chart.

    Returns a dict with ``jacobian`` = max |J - (I - hA)|, ``kappa`` =
    max |kappa - 1| and ``inverse`` = max |M - (I + hA)|.
    """
    if x is None:
        x = frame.points()
    J = jacobian(frame, x)
    A = skew_matrix(frame.midsurface, x[..., :2])
    eye = np.eye(3)
    M = np.linalg.inv(J)
    return {
        "jacobian": float(np.max(np.abs(J - (eye - frame.h * A)))),
        "kappa": float(np.max(np.abs(np.linalg.det(J) - 1.0))),
        "inverse": float(np.max(np.abs(M - (eye + frame.h * A)))),
    }


def detect_h0(mid: Midsurface, h, grid=(17, 17, 9), det_floor=0.5, shrink=0.9, max_steps=200):
    """Largest h in the sequence h, shrink*h, ... whose chart has min-node det > det_floor."""
    frame = ShellFrame(mid, h, grid)
    x = frame.points()
    for _ in range(max_steps):
        det = np.linalg.det(_jacobian_unchecked(mid, h, x))
        if det.min() > det_floor:
            return h
        h *= shrink
    raise NonInvertibleError("no admissible thickness found for this profile")
