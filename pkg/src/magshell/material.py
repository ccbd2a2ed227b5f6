"""Prototype magnetoelastic energy density and its linearization at the identity.

    W(F, nu) = max(dist^2(F, SO(3)), dist^p(F, SO(3))) + coupling * (|F^T nu|^2 - 1)^2

The coupling term only sees F^T nu, so W(RF, R nu) = W(F, nu) for every
rotation R, and it vanishes on SO(3).  Near the identity (dist < 1) the
first term is dist^2, which gives the closed-form Hessian

    C^nu_ijkl = (d_ik d_jl + d_il d_jk) + 8 * coupling * nu_i nu_j nu_k nu_l.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from magshell.errors import DomainError

NU_TOL = 1e-8
POLAR_MAXITER = 20
POLAR_TOL = 1e-12


@dataclass(frozen=True)
class MaterialModel:
    p: float = 4.0
    coupling: float = 1.0
    penalization_k: float = 100.0
    delta: float = 1.0
    det_tol: float = 1e-8

    def __post_init__(self):
        if not self.p > 3:
            raise DomainError(f"growth exponent must exceed 3, got {self.p}")
        for name in ("coupling", "penalization_k"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be finite and nonnegative, got {v}")
        if not self.delta > 0:
            raise DomainError("delta must be positive")


def _check_nu(nu):
    nu = np.asarray(nu, float)
    if np.any(np.abs(np.linalg.norm(nu, axis=-1) - 1.0) > NU_TOL):
        raise DomainError("magnetization direction must be a unit vector")
    return nu


def _svd_rotation(F):
    U, s, Vt = np.linalg.svd(F)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.ones(F.shape[:-2] + (3,))
    D[..., 2] = d
    return (U * D[..., None, :]) @ Vt


def polar_rotation(F):
    """Orthogonal factor of the polar decomposition, restricted to det F > 0.

    Newton iteration X <- (X + X^{-T}) / 2; entries that are near-singular,
    have det <= 0 or fail to converge fall back to the SVD.  For det F <= 0
    the result is the closest rotation (smallest singular direction flipped).
    """
    F = np.asarray(F, float)
    flat = F.reshape(-1, 3, 3)
    out = np.empty_like(flat)
    scale = np.linalg.norm(flat, axis=(1, 2))
    det = np.linalg.det(flat)
    newton = det > 1e-8 * np.maximum(scale, 1e-300) ** 3
    svd_idx = ~newton
    if np.any(newton):
        X = flat[newton].copy()
        done = np.zeros(len(X), bool)
        for _ in range(POLAR_MAXITER):
            Xn = 0.5 * (X + np.swapaxes(np.linalg.inv(X), 1, 2))
            step = np.max(np.abs(Xn - X), axis=(1, 2))
            X = Xn
            done = step <= POLAR_TOL
            if done.all():
                break
        out[newton] = X
        if not done.all():
            idx = np.flatnonzero(newton)[~done]
            svd_idx[idx] = True
    if np.any(svd_idx):
        out[svd_idx] = _svd_rotation(flat[svd_idx])
    return out.reshape(F.shape)


def dist_so3(F):
    """Frobenius distance from F to SO(3)."""
    F = np.asarray(F, float)
    R = polar_rotation(F)
    return np.linalg.norm(F - R, axis=(-2, -1))


def _coupling_term(model, F, nu):
    # |F^T nu|^2 - 1 expanded around F = I to avoid cancellation.
    G = F - np.eye(3)
    Gt_nu = np.einsum("...ji,...j->...i", G, nu)
    t = (np.sum(nu * nu, axis=-1) - 1.0) + 2.0 * np.sum(nu * Gt_nu, axis=-1) \
        + np.sum(Gt_nu * Gt_nu, axis=-1)
    return model.coupling * t * t


def density_W(model: MaterialModel, F, nu):
    F = np.asarray(F, float)
    nu = _check_nu(nu)
    d = dist_so3(F)
    return np.maximum(d * d, d ** model.p) + _coupling_term(model, F, nu)


def density_W_inc(model: MaterialModel, F, nu):
    """W on the constraint det F = 1 (within det_tol), +inf elsewhere."""
    F = np.asarray(F, float)
    w = density_W(model, F, nu)
    ok = np.abs(np.linalg.det(F) - 1.0) <= model.det_tol
    return np.where(ok, w, np.inf)


def density_W_k(model: MaterialModel, F, nu, k=None):
    k = model.penalization_k if k is None else k
    F = np.asarray(F, float)
    return density_W(model, F, nu) + 0.5 * k * (np.linalg.det(F) - 1.0) ** 2


def growth_bound(model: MaterialModel, F):
    d = dist_so3(F)
    return np.maximum(d * d, d ** model.p)


# --- linearization ---------------------------------------------------------

def elastic_matrix(model: MaterialModel, nu, check=True):
    """C^nu as a (..., 9, 9) matrix acting on row-major flattened 3x3 matrices.

    With ``check=False`` nu may be any vector (the formula is polynomial in nu).
    """
    nu = _check_nu(nu) if check else np.asarray(nu, float)
    eye = np.eye(3)
    base = (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)).reshape(9, 9)
    nn = np.einsum("...i,...j->...ij", nu, nu).reshape(nu.shape[:-1] + (9,))
    return base + 8.0 * model.coupling * nn[..., :, None] * nn[..., None, :]


def q3(model: MaterialModel, G, nu):
    """Q3(G, nu) = C^nu G : G, vectorized over leading axes."""
    G = np.asarray(G, float)
    nu = _check_nu(nu)
    S = 0.5 * (G + np.swapaxes(G, -1, -2))
    nSn = np.einsum("...i,...ij,...j->...", nu, S, nu)
    return 2.0 * np.sum(S * S, axis=(-2, -1)) + 8.0 * model.coupling * nSn**2


def q3_nu_gradient(model: MaterialModel, G, nu):
    """Partial derivative of Q3(G, nu) in nu (nu treated as a free vector)."""
    G = np.asarray(G, float)
    nu = np.asarray(nu, float)
    S = 0.5 * (G + np.swapaxes(G, -1, -2))
    Sn = np.einsum("...ij,...j->...i", S, nu)
    nSn = np.sum(nu * Sn, axis=-1)
    return 32.0 * model.coupling * nSn[..., None] * Sn


def q3k(model: MaterialModel, G, nu, k=None):
    k = model.penalization_k if k is None else k
    tr = np.trace(np.asarray(G, float), axis1=-2, axis2=-1)
    return q3(model, G, nu) + k * tr * tr


@dataclass(frozen=True)
class ElasticTensor:
    nu: np.ndarray
    entries: np.ndarray

    def matrix(self):
        return self.entries.reshape(9, 9)

    def q3(self, G):
        G = np.asarray(G, float)
        return np.einsum("ijkl,...ij,...kl->...", self.entries, G, G)


def elastic_tensor(model: MaterialModel, nu) -> ElasticTensor:
    nu = _check_nu(nu)
    if nu.shape != (3,):
        raise DomainError("elastic_tensor takes a single direction")
    return ElasticTensor(nu.copy(), elastic_matrix(model, nu).reshape(3, 3, 3, 3))


def fd_elastic_tensor(model: MaterialModel, nu, step=1e-4):
    """Hessian of W(., nu) at the identity by central differences.

    Independent of the closed form above; used only to validate it.
    """
    nu = _check_nu(nu)
    eye = np.eye(3)
    basis = np.eye(9).reshape(9, 3, 3)
    plus_plus = eye + step * (basis[:, None] + basis[None, :])
    plus_minus = eye + step * (basis[:, None] - basis[None, :])
    w_pp = density_W(model, plus_plus, nu)
    w_pm = density_W(model, plus_minus, nu)
    w_mp = density_W(model, 2 * eye - plus_minus, nu)
    w_mm = density_W(model, 2 * eye - plus_plus, nu)
    H = (w_pp - w_pm - w_mp + w_mm) / (4 * step * step)
    return H.reshape(3, 3, 3, 3)


class TensorCache:
    """Elastic tensors keyed by direction quantized to a 1e-6 grid."""

    def __init__(self, model: MaterialModel, quantum=1e-6):
        self.model = model
        self.quantum = quantum
        self._store: dict[tuple[int, int, int], ElasticTensor] = {}

    def __len__(self):
        return len(self._store)

    def get(self, nu) -> ElasticTensor:
        nu = np.asarray(nu, float)
        key = tuple(int(v) for v in np.round(nu / self.quantum))
        hit = self._store.get(key)
        if hit is None:
            hit = self._store.setdefault(key, elastic_tensor(self.model, nu))
        return hit
