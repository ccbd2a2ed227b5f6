"""Approximation of a shell deformation gradient by a field of rotations.

For each in-plane node the strain F = nabla_h y M_h is averaged over the
column below it and over a disc of radius h/2 with a polynomial bump,
projected to SO(3), and finally averaged once more into a single rotation Q.
The scaling report measures how the distances F - R, grad R and R - Q
decay with the thickness along a recovery sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from magshell.energy3d import State3D, strain
from magshell.errors import DomainError, ProjectionError
from magshell.geometry import ShellFrame
from magshell.material import MaterialModel, _svd_rotation, dist_so3
from magshell.rates import RateFit, fit_rate

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class RotationField:
    R: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        eye = np.eye(3)
        RtR = np.swapaxes(self.R, -1, -2) @ self.R
        if np.max(np.abs(RtR - eye), initial=0.0) > ORTHO_TOL:
            raise ProjectionError("rotation field is not orthogonal")
        if np.max(np.abs(np.linalg.det(self.R) - 1.0), initial=0.0) > ORTHO_TOL:
            raise ProjectionError("rotation field leaves SO(3)")


def bump(t):
    """(1 - (2t)^2)^3 on |t| < 1/2, zero outside."""
    t = np.asarray(t, float)
    return np.where(np.abs(t) < 0.5, (1.0 - 4.0 * t * t) ** 3, 0.0)


def closest_rotation(F):
    """Nearest rotation in the Frobenius norm; requires dist(F, SO(3)) < 1."""
    F = np.asarray(F, float)
    d = dist_so3(F)
    if np.any(d >= 1.0):
        raise ProjectionError(f"projection onto SO(3) undefined: dist = {np.max(d):.3g} >= 1")
    if np.any(np.linalg.det(F) <= 0):
        raise ProjectionError("projection onto SO(3) needs det F > 0")
    return _svd_rotation(F)


def _trap(n, d):
    w = np.full(n, d)
    w[[0, -1]] *= 0.5
    return w


def mollified_field(F, frame: ShellFrame):
    """Bump-weighted average of the (n1, n2, n3, 3, 3) field F around each x' node."""
    F = np.asarray(F, float)
    n1, n2, n3 = F.shape[:3]
    d1, d2, d3 = frame.spacing
    col = np.einsum("abkij,k->abij", F, _trap(n3, d3))
    w1, w2 = _trap(n1, d1), _trap(n2, d2)
    r1 = int(np.ceil(0.5 * frame.h / d1))
    r2 = int(np.ceil(0.5 * frame.h / d2))
    acc = np.zeros((n1, n2, 3, 3))
    mass = np.zeros((n1, n2))
    for i in range(-r1, r1 + 1):
        for j in range(-r2, r2 + 1):
            rho = float(bump(np.hypot(i * d1, j * d2) / frame.h))
            if rho == 0.0:
                continue
            # target node (a, b) receives source node (a + i, b + j)
            ta = slice(max(0, -i), n1 - max(0, i))
            tb = slice(max(0, -j), n2 - max(0, j))
            sa = slice(max(0, i), n1 - max(0, -i))
            sb = slice(max(0, j), n2 - max(0, -j))
            wsrc = rho * w1[sa, None] * w2[None, sb]
            acc[ta, tb] += wsrc[..., None, None] * col[sa, sb]
            mass[ta, tb] += wsrc
    return acc / mass[..., None, None]


def mollifier_weights(frame: ShellFrame, node):
    """Normalized weights of the mollifier centred at an in-plane node (for testing)."""
    n1, n2, _ = frame.grid
    d1, d2, _ = frame.spacing
    a, b = node
    i = np.arange(n1)[:, None] - a
    j = np.arange(n2)[None, :] - b
    w = bump(np.hypot(i * d1, j * d2) / frame.h) * _trap(n1, d1)[:, None] * _trap(n2, d2)[None, :]
    return w / w.sum()


def rotation_pipeline(state: State3D, frame: ShellFrame) -> RotationField:
    F, _ = strain(state, frame)
    Rt = mollified_field(F, frame)
    try:
        R = closest_rotation(Rt)
    except ProjectionError as exc:
        raise ProjectionError(f"rigidity hypothesis violated: {exc}") from exc
    g = frame.midsurface.grad_theta(*np.moveaxis(frame.plane_points(), -1, 0))
    area = np.sqrt(1.0 + frame.h**2 * np.sum(g * g, axis=-1))
    w = _trap(frame.grid[0], frame.spacing[0])[:, None] * _trap(frame.grid[1], frame.spacing[1])
    Rbar = np.einsum("ab,abij->ij", w * area, R) / np.sum(w * area)
    try:
        Q = closest_rotation(Rbar)
    except ProjectionError as exc:
        raise ProjectionError(f"rigidity hypothesis violated: {exc}") from exc
    return RotationField(R, Q)


def rigidity_norms(state: State3D, frame: ShellFrame, q, rot: RotationField | None = None):
    """(||F - R||_q on Omega, ||grad' R||_q on omega, ||R - Q||_q on omega)."""
    if rot is None:
        rot = rotation_pipeline(state, frame)
    F, _ = strain(state, frame)
    n1, n2, n3 = frame.grid
    d1, d2, d3 = frame.spacing
    w2 = _trap(n1, d1)[:, None] * _trap(n2, d2)[None, :]
    w3 = w2[..., None] * _trap(n3, d3)
    R = rot.R
    e1 = np.linalg.norm(F - R[:, :, None], axis=(-2, -1))
    dR = np.stack([np.gradient(R, d1, axis=0, edge_order=2),
                   np.gradient(R, d2, axis=1, edge_order=2)], axis=-1)
    e2 = np.sqrt(np.sum(dR * dR, axis=(-3, -2, -1)))
    e3 = np.linalg.norm(R - rot.Q, axis=(-2, -1))
    return tuple(float(np.sum(w * e**q) ** (1.0 / q)) for w, e in ((w3, e1), (w2, e2), (w2, e3)))


@dataclass(frozen=True)
class ScalingReport:
    hs: tuple
    norms: dict
    fits: dict
    expected: dict


def scaling_report(states, frames, model: MaterialModel, beta=9.0, qs=None) -> ScalingReport:
    """Fitted decay exponents of the three rigidity distances for q in {2, p}."""
    if len(frames) < 3:
        raise DomainError("scaling report needs at least three thicknesses")
    qs = (2.0, model.p) if qs is None else qs
    hs = tuple(f.h for f in frames)
    rots = [rotation_pipeline(s, f) for s, f in zip(states, frames)]
    norms, fits, expected = {}, {}, {}
    for q in qs:
        vals = np.array([rigidity_norms(s, f, q, r) for s, f, r in zip(states, frames, rots)])
        norms[q] = vals
        fits[q] = tuple(fit_rate(zip(hs, vals[:, i])) for i in range(3))
        expected[q] = (beta / q, beta / q - 1.0, beta / q - 1.0)
    return ScalingReport(hs, norms, fits, expected)


__all__ = ["RotationField", "RateFit", "ScalingReport", "bump", "closest_rotation",
           "mollified_field", "mollifier_weights", "rotation_pipeline", "rigidity_norms",
           "scaling_report"]
