"""Limiting plate energy E(u, v, lambda) on a node grid over omega, and its minimization.

    E = 1/2 int Q2inc(sym(grad u + grad v (x) grad theta), lambda)
        + 1/24 int Q2inc(-grad^2 v, lambda) + alpha int |grad lambda|^2
        + 1/2 int (lambda_3)^2

Derivatives are finite differences (central inside, second-order one-sided
at the boundary) assembled as sparse matrices; integrals use the trapezoid
rule.  No boundary conditions are imposed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from magshell.errors import DomainError, NumericalError
from magshell.geometry import Midsurface
from magshell.material import MaterialModel, q3_nu_gradient
from magshell.qforms import embed, incompressible_operators

log = logging.getLogger(__name__)

NU_TOL = 1e-8


def _d1_matrix(n, d):
    """First derivative, matching np.gradient(..., edge_order=2)."""
    D = sparse.lil_matrix((n, n))
    D[0, :3] = [-1.5, 2.0, -0.5]
    D[n - 1, n - 3:] = [0.5, -2.0, 1.5]
    for i in range(1, n - 1):
        D[i, i - 1] = -0.5
        D[i, i + 1] = 0.5
    return (D / d).tocsr()


def _d2_matrix(n, d):
    D = sparse.lil_matrix((n, n))
    D[0, :4] = [2.0, -5.0, 4.0, -1.0]
    D[n - 1, n - 4:] = [-1.0, 4.0, -5.0, 2.0]
    for i in range(1, n - 1):
        D[i, i - 1:i + 2] = [1.0, -2.0, 1.0]
    return (D / d**2).tocsr()


@dataclass(frozen=True)
class Grid2D:
    """Node grid on (0, lx) x (0, ly) with sparse difference operators on raveled fields."""

    mid: Midsurface
    shape: tuple[int, int]
    ops: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n1, n2 = self.shape
        if min(self.shape) < 4:
            raise DomainError("reduced grid needs at least 4 nodes per axis")
        d1, d2 = self.mid.lx / (n1 - 1), self.mid.ly / (n2 - 1)
        I1, I2 = sparse.identity(n1), sparse.identity(n2)
        A1, A2 = _d1_matrix(n1, d1), _d1_matrix(n2, d2)
        D1 = sparse.kron(A1, I2).tocsr()
        D2 = sparse.kron(I1, A2).tocsr()
        w1 = np.full(n1, d1)
        w2 = np.full(n2, d2)
        w1[[0, -1]] *= 0.5
        w2[[0, -1]] *= 0.5
        x1 = np.linspace(0.0, self.mid.lx, n1)
        x2 = np.linspace(0.0, self.mid.ly, n2)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        ops = {
            "D1": D1, "D2": D2,
            "D11": sparse.kron(_d2_matrix(n1, d1), I2).tocsr(),
            "D22": sparse.kron(I1, _d2_matrix(n2, d2)).tocsr(),
            "D12": (D1 @ D2).tocsr(),
            "w": np.outer(w1, w2).ravel(),
            "grad_theta": self.mid.grad_theta(X1, X2).reshape(-1, 2),
            "points": np.stack([X1, X2], axis=-1),
        }
        object.__setattr__(self, "ops", ops)

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    def __getattr__(self, name):
        ops = self.__dict__.get("ops")
        if ops is not None and name in ops:
            return ops[name]
        raise AttributeError(name)


@dataclass(frozen=True)
class ReducedState:
    """u (n, 2), v (n,), lam (n, 3) on the raveled grid."""

    u: np.ndarray
    v: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        if np.any(np.abs(np.linalg.norm(self.lam, axis=-1) - 1.0) > NU_TOL):
            raise DomainError("lambda must be unit length at every node")

    @classmethod
    def zeros(cls, grid: Grid2D, lam=(0.0, 0.0, 1.0)):
        lam = np.asarray(lam, float)
        lam = lam / np.linalg.norm(lam)
        n = grid.size
        return cls(np.zeros((n, 2)), np.zeros(n), np.tile(lam, (n, 1)))

    @classmethod
    def from_triple(cls, grid: Grid2D, triple):
        s = triple.sample(grid.points)
        n = grid.size
        return cls(s["u"].reshape(n, 2), s["v"].reshape(n), s["lam"].reshape(n, 3))


def _strains(grid, u, v):
    g = grid.grad_theta
    d1u, d2u = grid.D1 @ u, grid.D2 @ u
    d1v, d2v = grid.D1 @ v, grid.D2 @ v
    off = 0.5 * (d2u[:, 0] + d1u[:, 1] + d1v * g[:, 1] + d2v * g[:, 0])
    hm = np.stack([d1u[:, 0] + d1v * g[:, 0], off, off, d2u[:, 1] + d2v * g[:, 1]], axis=1)
    d12 = grid.D12 @ v
    hb = -np.stack([grid.D11 @ v, d12, d12, grid.D22 @ v], axis=1)
    return hm, hb


def energy_terms(grid: Grid2D, model: MaterialModel, u, v, lam, alpha=1.0):
    """Four-term breakdown; lam is not required to be unit length here."""
    w = grid.w
    S, _ = incompressible_operators(model, lam, check=False)
    hm, hb = _strains(grid, u, v)
    qm = np.einsum("na,nab,nb->n", hm, S, hm)
    qb = np.einsum("na,nab,nb->n", hb, S, hb)
    d1l, d2l = grid.D1 @ lam, grid.D2 @ lam
    return {
        "membrane": 0.5 * float(w @ qm),
        "bending": float(w @ qb) / 24.0,
        "exchange": alpha * float(w @ (np.sum(d1l**2, axis=1) + np.sum(d2l**2, axis=1))),
        "magnetostatic": 0.5 * float(w @ lam[:, 2] ** 2),
    }


def reduced_energy(state: ReducedState, grid: Grid2D, model: MaterialModel, alpha=1.0):
    terms = energy_terms(grid, model, state.u, state.v, state.lam, alpha)
    terms["total"] = sum(terms.values())
    return terms


def energy_gradient(grid: Grid2D, model: MaterialModel, u, v, lam, alpha=1.0):
    """Exact gradient of the discrete energy with respect to (u, v, lam)."""
    w = grid.w
    g = grid.grad_theta
    S, K = incompressible_operators(model, lam, check=False)
    hm, hb = _strains(grid, u, v)
    gm = w[:, None] * np.einsum("nab,nb->na", S, hm)
    gb = (2.0 / 24.0) * w[:, None] * np.einsum("nab,nb->na", S, hb)
    gs = 0.5 * (gm[:, 1] + gm[:, 2])
    D1t, D2t = grid.D1.T, grid.D2.T
    du = np.stack([D1t @ gm[:, 0] + D2t @ gs, D1t @ gs + D2t @ gm[:, 3]], axis=1)
    dv = D1t @ (gm[:, 0] * g[:, 0] + gs * g[:, 1]) + D2t @ (gm[:, 3] * g[:, 1] + gs * g[:, 0])
    dv -= grid.D11.T @ gb[:, 0] + grid.D22.T @ gb[:, 3] + grid.D12.T @ (gb[:, 1] + gb[:, 2])
    # envelope theorem: d/dnu of the constrained minimum is d/dnu Q3 at the argmin
    cm = np.einsum("nia,na->ni", K, hm)
    cb = np.einsum("nia,na->ni", K, hb)
    Gm = embed(hm.reshape(-1, 2, 2), cm)
    Gb = embed(hb.reshape(-1, 2, 2), cb)
    dl = 0.5 * w[:, None] * q3_nu_gradient(model, Gm, lam)
    dl += (w / 24.0)[:, None] * q3_nu_gradient(model, Gb, lam)
    dl += 2.0 * alpha * (D1t @ (w[:, None] * (grid.D1 @ lam)) + D2t @ (w[:, None] * (grid.D2 @ lam)))
    dl[:, 2] += w * lam[:, 2]
    return du, dv, dl


def gradient_check(state: ReducedState, grid: Grid2D, model: MaterialModel, alpha=1.0,
                   directions=20, step=1e-5, seed=0):
    """Max relative error of the analytic directional derivative against central differences."""
    rng = np.random.default_rng(seed)
    du, dv, dl = energy_gradient(grid, model, state.u, state.v, state.lam, alpha)

    def E(u, v, lam):
        return sum(energy_terms(grid, model, u, v, lam, alpha).values())

    worst = 0.0
    for _ in range(directions):
        pu = rng.standard_normal(state.u.shape)
        pv = rng.standard_normal(state.v.shape)
        pl = rng.standard_normal(state.lam.shape)
        parts = (float(np.sum(du * pu)), float(np.sum(dv * pv)), float(np.sum(dl * pl)))
        an = sum(parts)
        # the blocks can cancel; measure against the size of the summands
        scale = max(sum(abs(x) for x in parts), 1e-12)
        fd = (E(state.u + step * pu, state.v + step * pv, state.lam + step * pl)
              - E(state.u - step * pu, state.v - step * pv, state.lam - step * pl)) / (2 * step)
        worst = max(worst, abs(fd - an) / scale)
    return worst


def _tangent(lam, dl):
    return dl - np.sum(dl * lam, axis=1, keepdims=True) * lam


def _normalize(lam):
    return lam / np.linalg.norm(lam, axis=1, keepdims=True)


@dataclass(frozen=True)
class MinimizeOptions:
    step: float = 1.0
    max_iters: int = 2000
    tol: float = 1e-8
    armijo: float = 1e-4
    min_step: float = 1e-16


@dataclass
class MinimizeResult:
    state: ReducedState
    energies: list
    grad_norms: list
    converged: bool
    log: list = field(default_factory=list)


def minimize(initial: ReducedState, grid: Grid2D, model: MaterialModel, which=("u", "v", "lambda"),
             alpha=1.0, opts: MinimizeOptions | None = None) -> MinimizeResult:
    """Projected gradient descent with Barzilai-Borwein steps and Armijo backtracking.

    Variables not listed in ``which`` stay fixed.  lambda is updated along
    its tangential gradient and renormalized nodewise after each step.
    """
    opts = opts or MinimizeOptions()
    which = set(which)
    unknown = which - {"u", "v", "lambda"}
    if unknown:
        raise DomainError(f"unknown variables {sorted(unknown)}")
    u, v, lam = initial.u.copy(), initial.v.copy(), initial.lam.copy()

    def terms(u, v, lam):
        return energy_terms(grid, model, u, v, lam, alpha)

    def direction(u, v, lam):
        du, dv, dl = energy_gradient(grid, model, u, v, lam, alpha)
        return (du if "u" in which else np.zeros_like(du),
                dv if "v" in which else np.zeros_like(dv),
                _tangent(lam, dl) if "lambda" in which else np.zeros_like(dl))

    def norm(gs):
        return float(np.sqrt(sum(np.sum(x * x) for x in gs)))

    t_terms = terms(u, v, lam)
    E = sum(t_terms.values())
    gs = direction(u, v, lam)
    energies, gnorms = [E], [norm(gs)]
    rows = [(0, E, t_terms, gnorms[0])]
    t = opts.step
    converged = gnorms[0] <= opts.tol
    it = 0
    while not converged and it < opts.max_iters:
        it += 1
        g2 = gnorms[-1] ** 2
        step = t
        while True:
            un, vn = u - step * gs[0], v - step * gs[1]
            ln = _normalize(lam - step * gs[2]) if "lambda" in which else lam
            t_new = terms(un, vn, ln)
            En = sum(t_new.values())
            if En <= E - opts.armijo * step * g2:
                break
            step *= 0.5
            if step < opts.min_step:
                raise NumericalError("line search failed: gradient is not a descent direction")
        gn = direction(un, vn, ln)
        # Barzilai-Borwein estimate for the next trial step
        s = [un - u, vn - v, ln - lam]
        yv = [a - b for a, b in zip(gn, gs)]
        sy = sum(float(np.sum(a * b)) for a, b in zip(s, yv))
        ss = sum(float(np.sum(a * a)) for a in s)
        t = ss / sy if sy > 0 else 2.0 * step
        u, v, lam, gs, E = un, vn, ln, gn, En
        energies.append(E)
        gnorms.append(norm(gs))
        rows.append((it, E, t_new, gnorms[-1]))
        converged = gnorms[-1] <= opts.tol
    if not converged:
        log.info("minimize stopped at the iteration cap (%d), grad norm %.3e", it, gnorms[-1])
    return MinimizeResult(ReducedState(u, v, lam), energies, gnorms, converged, rows)


def quadratic_u_oracle(state: ReducedState, grid: Grid2D, model: MaterialModel, alpha=1.0):
    """Minimize over u with v, lambda fixed by one linear solve.

    The membrane term is quadratic in u; the normal equations are singular
    on infinitesimal rigid motions, so the minimum-norm solution is taken.
    """
    n = grid.size
    S, _ = incompressible_operators(model, state.lam)
    D1, D2 = grid.D1, grid.D2
    Z = sparse.csr_matrix((n, n))
    # rows: vec(sym grad u) components (11, 12, 21, 22); columns: (u1, u2)
    B = sparse.bmat([[D1, Z], [0.5 * D2, 0.5 * D1], [0.5 * D2, 0.5 * D1], [Z, D2]]).tocsr()
    hm0, _ = _strains(grid, np.zeros((n, 2)), state.v)
    c = hm0.T.ravel()
    rows, cols, vals = [], [], []
    for a in range(4):
        for b in range(4):
            rows.append(a * n + np.arange(n))
            cols.append(b * n + np.arange(n))
            vals.append(grid.w * S[:, a, b])
    WS = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(4 * n, 4 * n))
    A = (B.T @ WS @ B).toarray()
    rhs = -(B.T @ (WS @ c))
    x, *_ = np.linalg.lstsq(A, rhs, rcond=1e-12)
    u = np.stack([x[:n], x[n:]], axis=1)
    out = replace(state, u=u)
    return out, reduced_energy(out, grid, model, alpha)["total"]
