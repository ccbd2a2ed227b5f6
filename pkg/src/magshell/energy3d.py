"""Rescaled three-dimensional energy E_h = E_el + E_exc + E_mag of a sampled state.

States live on the node grid of Omega = omega x (-1/2, 1/2).  The
magnetization is stored composed with the deformation, nu = m o y, so
exchange and elastic terms are integrated over Omega; only the stray-field
solve needs the deformed body, which is voxelized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from magshell import maxwell
from magshell.errors import DomainError
from magshell.geometry import ShellFrame, jacobian, metric_factors, shell_map
from magshell.material import MaterialModel, density_W, density_W_k

NU_TOL = 1e-8


@dataclass(frozen=True)
class State3D:
    """Deformation y (n1, n2, n3, 3) and composed magnetization nu on the Omega grid.

    ``grad`` optionally carries the exact scaled gradient nabla_h y; when
    absent it is computed by finite differences.
    """

    y: np.ndarray
    nu: np.ndarray
    h: float
    beta: float = 9.0
    grad: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.y.ndim != 4 or self.y.shape[-1] != 3:
            raise DomainError("deformation must have shape (n1, n2, n3, 3)")
        if self.nu.shape != self.y.shape:
            raise DomainError("magnetization and deformation grids differ")
        if not self.h > 0:
            raise DomainError("thickness must be positive")
        if np.any(np.abs(np.linalg.norm(self.nu, axis=-1) - 1.0) > NU_TOL):
            raise DomainError("composed magnetization must be unit length at every node")
        if self.grad is not None and self.grad.shape != self.y.shape + (3,):
            raise DomainError("gradient must have shape (n1, n2, n3, 3, 3)")


@dataclass(frozen=True)
class EnergyBreakdown:
    elastic: float
    exchange: float
    magnetostatic: float
    det_ok: bool
    injective_ok: bool
    elastic_penalized: float | None = None

    @property
    def total(self):
        return self.elastic + self.exchange + self.magnetostatic

    @property
    def admissible(self):
        return self.det_ok and self.injective_ok


def trapezoid_weights(frame: ShellFrame):
    ws = []
    for nodes in (frame.x1, frame.x2, frame.x3):
        w = np.full(len(nodes), nodes[1] - nodes[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        ws.append(w)
    return ws[0][:, None, None] * ws[1][None, :, None] * ws[2][None, None, :]


def scaled_gradient(y, frame: ShellFrame):
    """nabla_h y with [..., i, j] = d_j y_i, third column scaled by 1/h."""
    y = np.asarray(y, float)
    if min(y.shape[:3]) < 3:
        raise DomainError("scaled_gradient needs at least 3 nodes per axis")
    d1, d2, d3 = frame.spacing
    cols = [np.gradient(y, d, axis=a, edge_order=2) for a, d in enumerate((d1, d2, d3))]
    cols[2] = cols[2] / frame.h
    return np.stack(cols, axis=-1)


def _grad(state, frame):
    return state.grad if state.grad is not None else scaled_gradient(state.y, frame)


def strain(state: State3D, frame: ShellFrame):
    """F = nabla_h y M_h and kappa_h at the nodes."""
    M, kappa = metric_factors(frame, frame.points())
    return _grad(state, frame) @ M, kappa


def _check_beta(state, model):
    if not state.beta > 2 * model.p:
        raise DomainError(f"scaling exponent beta={state.beta} must exceed 2p={2 * model.p}")


def elastic_energy(state: State3D, frame: ShellFrame, model: MaterialModel, penalized=False):
    """(1/h^beta) int W^inc(F, nu) kappa dx, or the W^k variant when ``penalized``.

    The incompressible value is +inf as soon as one node violates det_tol.
    """
    _check_beta(state, model)
    F, kappa = strain(state, frame)
    w = trapezoid_weights(frame)
    if penalized:
        dens = density_W_k(model, F, state.nu)
    else:
        if np.any(np.abs(np.linalg.det(F) - 1.0) > model.det_tol):
            return np.inf
        dens = density_W(model, F, state.nu)
    return float(np.sum(w * dens * kappa)) / state.h**state.beta


def exchange_energy(state: State3D, frame: ShellFrame, alpha):
    """(alpha/h) int_{Omega^y} |grad m|^2, pulled back to Omega.

    grad m o y = nabla_h nu M_h F^{-1} and the volume element is
    h kappa det F dx.
    """
    if alpha < 0:
        raise DomainError("exchange constant must be nonnegative")
    if alpha == 0:
        return 0.0
    gnu = scaled_gradient(state.nu, frame)
    F, kappa = strain(state, frame)
    M, _ = metric_factors(frame, frame.points())
    gm = gnu @ M @ np.linalg.inv(F)
    dens = np.sum(gm * gm, axis=(-2, -1)) * kappa * np.linalg.det(F)
    return alpha * float(np.sum(trapezoid_weights(frame) * dens))


def deformed_magnetization(state: State3D, frame: ShellFrame, voxel_spacing=None, subsamples=2):
    """Voxelized chi m on the deformed configuration."""
    if voxel_spacing is None:
        d1, d2, d3 = frame.spacing
        voxel_spacing = (d1, d2, frame.h * d3)
    # det of the unscaled gradient: h * det(nabla_h y)
    jac = frame.h * np.linalg.det(_grad(state, frame))
    return maxwell.rasterize_field(state.y, state.nu, jac, frame.spacing, voxel_spacing,
                                   subsamples)


def magnetostatic_energy(state: State3D, frame: ShellFrame, pad=2.0, voxel_spacing=None,
                         subsamples=2):
    field_ = deformed_magnetization(state, frame, voxel_spacing, subsamples)
    return maxwell.mag_energy_rescaled(field_, frame.h, pad)


def displacements(state: State3D, frame: ShellFrame):
    """In-plane and out-of-plane displacement averages (U, V) on the omega grid."""
    w3 = np.full(len(frame.x3), frame.x3[1] - frame.x3[0])
    w3[0] *= 0.5
    w3[-1] *= 0.5
    g = state.h ** (state.beta / 2)
    xp = frame.plane_points()
    theta = frame.midsurface.theta(xp[..., 0], xp[..., 1])
    U = np.einsum("abkc,k->abc", state.y[..., :2], w3) - xp
    V = np.einsum("abk,k->ab", state.y[..., 2], w3) - state.h * theta
    return U / g, V * state.h / g


def _injective(y, shrink=0.5, tol=1e-12):
    n1, n2, n3 = y.shape[:3]
    corners = [y[i:n1 - 1 + i, j:n2 - 1 + j, k:n3 - 1 + k]
               for i in (0, 1) for j in (0, 1) for k in (0, 1)]
    stack = np.stack(corners, axis=0)
    lo = stack.min(axis=0).reshape(-1, 3)
    hi = stack.max(axis=0).reshape(-1, 3)
    centre = 0.5 * (lo + hi)
    half = 0.5 * shrink * (hi - lo)
    idx = np.stack(np.unravel_index(np.arange(len(lo)), (n1 - 1, n2 - 1, n3 - 1)), axis=-1)
    # candidate pairs: centres closer than the largest possible overlap distance
    tree = cKDTree(centre)
    reach = 2.0 * float(half.max())
    pairs = tree.query_pairs(reach, p=np.inf, output_type="ndarray")
    if len(pairs) == 0:
        return True
    a, b = pairs[:, 0], pairs[:, 1]
    adjacent = np.all(np.abs(idx[a] - idx[b]) <= 1, axis=1)
    overlap = np.all(np.abs(centre[a] - centre[b]) < half[a] + half[b] - tol, axis=1)
    return not np.any(overlap & ~adjacent)


def admissibility(state: State3D, frame: ShellFrame):
    """(det_ok, injective_ok); injectivity is a bounding-box heuristic."""
    # det(nabla y) = h det(nabla_h y) = h kappa det F
    det_ok = bool(np.all(frame.h * np.linalg.det(_grad(state, frame)) > 0))
    return det_ok, bool(_injective(state.y))


def total_energy(state: State3D, frame: ShellFrame, model: MaterialModel, alpha=1.0,
                 pad=2.0, voxel_spacing=None, subsamples=2):
    el = elastic_energy(state, frame, model)
    pen = elastic_energy(state, frame, model, penalized=True) if not np.isfinite(el) else None
    exc = exchange_energy(state, frame, alpha)
    mag = magnetostatic_energy(state, frame, pad, voxel_spacing, subsamples)
    det_ok, inj_ok = admissibility(state, frame)
    return EnergyBreakdown(el, exc, mag, det_ok, inj_ok, pen)


def shell_state(frame: ShellFrame, nu=(0.0, 0.0, 1.0), beta=9.0):
    """The undeformed shell y = Theta_h o z_h with a constant composed magnetization."""
    x = frame.points()
    nu = np.broadcast_to(np.asarray(nu, float), x.shape).copy()
    J = jacobian(frame, x)
    return State3D(shell_map(frame, x), nu, frame.h, beta, grad=J)
