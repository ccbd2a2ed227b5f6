"""Reduced quadratic forms obtained by minimizing Q3 over the transverse strain column.

For H in R^{2x2} and c in R^3 let

    G(H, c) = [[H, 0], [0, 0]] + c (x) e3 + e3 (x) c.

Q2^k(H, nu) minimizes Q3(G) + k tr(G)^2 over all c; Q2^inc(H, nu)
minimizes Q3(G) over the c with tr G = 0, i.e. c3 = -tr(H)/2.  Both are
small linear solves, vectorized over any leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from magshell.errors import DomainError, NumericalError
from magshell.material import MaterialModel, elastic_matrix, q3, q3k

# vec(G) = _P @ vec(H) + _B @ c, row-major flattening.
_P = np.zeros((9, 4))
for _a, (_i, _j) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
    _P[3 * _i + _j, _a] = 1.0
_B = np.zeros((9, 3))
for _i in range(3):
    _B[3 * _i + 2, _i] += 1.0
    _B[3 * 2 + _i, _i] += 1.0
_TRACE9 = np.eye(3).ravel()
_TRACE4 = np.array([1.0, 0.0, 0.0, 1.0])


def embed(H, c):
    H = np.asarray(H, float)
    c = np.asarray(c, float)
    shape = np.broadcast_shapes(H.shape[:-2], c.shape[:-1])
    G = np.zeros(shape + (3, 3))
    G[..., :2, :2] = H
    G[..., :, 2] += c
    G[..., 2, :] += c
    return G


def _vec(H):
    return np.asarray(H, float).reshape(np.shape(H)[:-2] + (4,))


@dataclass(frozen=True)
class ReducedForm:
    """Q2^inc or Q2^k for a fixed material, as a callable on (H, nu)."""

    model: MaterialModel
    kind: str = "incompressible"
    k: float | None = None

    def __post_init__(self):
        if self.kind not in ("incompressible", "penalized"):
            raise ValueError(f"unknown reduced form {self.kind!r}")

    def __call__(self, H, nu):
        if self.kind == "incompressible":
            return q2_incompressible(self.model, H, nu)[0]
        return q2_penalized(self.model, H, nu, self.k)[0]


def q2_penalized(model: MaterialModel, H, nu, k=None):
    """Return (value, argmin c) of min_c Q3^k(G(H, c), nu)."""
    k = model.penalization_k if k is None else k
    if not k > 0:
        raise DomainError("penalization weight must be positive")
    h = _vec(H)
    C = elastic_matrix(model, nu) + k * np.outer(_TRACE9, _TRACE9)
    a = np.einsum("ij,...j->...i", _P, h)
    BtC = np.einsum("ia,...ij->...aj", _B, C)
    lhs = BtC @ _B
    rhs = -np.einsum("...aj,...j->...a", BtC, a)
    lhs, rhs = np.broadcast_arrays(lhs, rhs[..., None])
    c = _solve(lhs, rhs)[..., 0]
    g = a + np.einsum("ia,...a->...i", _B, c)
    value = np.einsum("...i,...ij,...j->...", g, C, g)
    return np.maximum(value, 0.0), c


def incompressible_operators(model: MaterialModel, nu, check=True):
    """Matrices (S, K) with Q2^inc(H) = h.S.h and argmin c = K h, h = vec(H).

    S has shape (..., 4, 4), K (..., 3, 4).
    """
    C = elastic_matrix(model, nu, check)
    # c3 = -tr(H)/2 folded into the H-dependent part.
    L = _P - 0.5 * np.outer(_B[:, 2], _TRACE4)
    Bp = _B[:, :2]
    BtC = np.einsum("ia,...ij->...aj", Bp, C)
    lhs = BtC @ Bp
    rhs = -(BtC @ L)
    Kp = _solve(lhs, rhs)
    T = L + np.einsum("ia,...ab->...ib", Bp, Kp)
    S = np.einsum("...ia,...ij,...jb->...ab", T, C, T)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    K = np.concatenate([Kp, np.broadcast_to(-0.5 * _TRACE4, Kp.shape[:-2] + (1, 4))], axis=-2)
    return S, K


def q2_incompressible(model: MaterialModel, H, nu):
    """Return (value, argmin c) of min Q3(G(H, c), nu) subject to tr G = 0."""
    h = _vec(H)
    S, K = incompressible_operators(model, nu)
    value = np.einsum("...a,...ab,...b->...", h, S, h)
    c = np.einsum("...ia,...a->...i", K, h)
    return np.maximum(value, 0.0), c


def check_gap(model: MaterialModel, H, nu, k=None):
    """(Q2^inc - Q2^k) * sqrt(k) / |H|^2, the quantity bounded in the penalization estimate."""
    k = model.penalization_k if k is None else k
    H = np.asarray(H, float)
    norm2 = np.sum(H * H, axis=(-2, -1))
    if np.any(norm2 == 0):
        raise DomainError("gap ratio undefined for H = 0")
    inc = q2_incompressible(model, H, nu)[0]
    pen = q2_penalized(model, H, nu, k)[0]
    return (inc - pen) * np.sqrt(k) / norm2


def _solve(lhs, rhs):
    try:
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular stationarity system for the reduced form") from exc


# --- brute-force oracles (used by the test-suite) -------------------------

def _zoom_minimize(objective, dim, half_width=5.0, coarse=41, fine=21, tol=1e-11, max_levels=60):
    center = np.zeros(dim)
    n = coarse
    width = half_width
    best_val = np.inf
    for _ in range(max_levels):
        axes = [np.linspace(center[d] - width, center[d] + width, n) for d in range(dim)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        vals = objective(pts)
        i = int(np.argmin(vals))
        center, best_val = pts[i], float(vals[i])
        step = 2 * width / (n - 1)
        if step < tol:
            break
        width = 2 * step
        n = fine
    return best_val, center


def brute_force_q2k(model: MaterialModel, H, nu, k=None, half_width=5.0):
    """Grid search over c in [-w, w]^3 with nested local refinement."""
    H = np.asarray(H, float)
    return _zoom_minimize(lambda cs: q3k(model, embed(H, cs), nu, k), 3, half_width)


def brute_force_q2inc(model: MaterialModel, H, nu, half_width=5.0):
    H = np.asarray(H, float)
    c3 = -0.5 * np.trace(H)

    def objective(cp):
        cs = np.concatenate([cp, np.full((len(cp), 1), c3)], axis=1)
        return q3(model, embed(H, cs), nu)

    val, cp = _zoom_minimize(objective, 2, half_width)
    return val, np.append(cp, c3)
